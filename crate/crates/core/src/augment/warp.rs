//! Sinusoidal time warping of feature trajectories.
//!
//! `w(t) = t + Σ_{r=1..R} a_r · sin(π r t / (T − 1))` pins both endpoints
//! and, for small amplitudes, is strictly increasing. Frames are resampled
//! at `w(t)` by linear interpolation between the neighbouring integer frames.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct WarpFunction {
    len: usize,
    amplitudes: Vec<f64>,
}

impl WarpFunction {
    /// Fails unless `len ≥ 2` and `w` is strictly increasing on `0..len`.
    pub fn new(len: usize, amplitudes: Vec<f64>) -> Result<Self> {
        if len < 2 {
            return Err(Error::Config(format!("warp needs T ≥ 2, got {len}")));
        }
        let w = Self { len, amplitudes };
        if !w.is_strictly_increasing() {
            return Err(Error::Config(
                "warp is not strictly increasing on the frame grid".into(),
            ));
        }
        Ok(w)
    }

    pub fn identity(len: usize) -> Result<Self> {
        Self::new(len, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn order(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    fn raw(len: usize, amplitudes: &[f64], t: f64) -> f64 {
        let last = (len - 1) as f64;
        if t == 0.0 {
            return 0.0;
        }
        if t == last {
            return last;
        }
        let base = std::f64::consts::PI * t / last;
        t + amplitudes
            .iter()
            .enumerate()
            .map(|(r, a)| a * (base * (r + 1) as f64).sin())
            .sum::<f64>()
    }

    /// `w(t)` for `0 ≤ t ≤ T−1`. Both endpoints are returned exactly.
    pub fn eval(&self, t: f64) -> Result<f64> {
        let last = (self.len - 1) as f64;
        if !(0.0..=last).contains(&t) {
            return Err(Error::OutOfRange {
                index: t.max(0.0) as usize,
                len: self.len,
            });
        }
        Ok(Self::raw(self.len, &self.amplitudes, t))
    }

    /// `w` on the integer grid `0..T`.
    pub fn grid(&self) -> Vec<f64> {
        (0..self.len)
            .map(|t| Self::raw(self.len, &self.amplitudes, t as f64))
            .collect()
    }

    fn is_strictly_increasing(&self) -> bool {
        self.grid().windows(2).all(|p| p[1] > p[0])
    }
}

/// Draws `a_r ~ Normal(0, sigma)`. Draws that break strict monotonicity are
/// rejected; after `max_retries` consecutive rejections the scale is halved.
pub fn sample_warp(
    rng: &mut impl Rng,
    len: usize,
    order: usize,
    sigma: f64,
    max_retries: usize,
) -> Result<WarpFunction> {
    if len < 2 {
        return Err(Error::Config(format!("warp needs T ≥ 2, got {len}")));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!(
            "warp sigma must be finite and ≥ 0, got {sigma}"
        )));
    }
    let mut scale = sigma;
    loop {
        let normal = Normal::new(0.0, scale).map_err(|e| Error::Config(e.to_string()))?;
        for _ in 0..max_retries.max(1) {
            let amps: Vec<f64> = (0..order).map(|_| normal.sample(rng)).collect();
            if let Ok(w) = WarpFunction::new(len, amps) {
                return Ok(w);
            }
        }
        scale *= 0.5;
    }
}

/// `x(w) ≈ (w − ⌊w⌋)·x(⌈w⌉) + (⌈w⌉ − w)·x(⌊w⌋)`, and exactly `x(w)` when
/// `w` is integral. `w` is clamped to the valid frame range.
pub fn interpolate_frame<S: Scalar>(x: &FeatureSequence<S>, w: f64, out: &mut [S]) {
    let w = w.clamp(0.0, (x.len() - 1) as f64);
    let lo = w.floor();
    let hi = w.ceil();
    let a = x.frame(lo as usize);
    if lo == hi {
        out.copy_from_slice(a);
        return;
    }
    let b = x.frame(hi as usize);
    let (wb, wa) = (S::of(w - lo), S::of(hi - w));
    for ((o, &xa), &xb) in out.iter_mut().zip(a).zip(b) {
        *o = wb * xb + wa * xa;
    }
}

/// Output frame `t` is `x(w(t))`.
pub fn apply_warp<S: Scalar>(
    x: &FeatureSequence<S>,
    w: &WarpFunction,
) -> Result<FeatureSequence<S>> {
    if w.len() != x.len() {
        return Err(Error::ShapeMismatch {
            op: "apply_warp",
            left: vec![x.len(), x.dim()],
            right: vec![w.len()],
        });
    }
    resample(x, &w.grid())
}

/// Uniform tempo change at the feature level: output frame `t` is
/// `x(α·t)`, output length `max(1, round(T/α))`.
pub fn tempo_features<S: Scalar>(x: &FeatureSequence<S>, alpha: f64) -> Result<FeatureSequence<S>> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Config(format!(
            "tempo ratio must be positive, got {alpha}"
        )));
    }
    let out_len = ((x.len() as f64 / alpha).round() as usize).max(1);
    let positions: Vec<f64> = (0..out_len).map(|t| alpha * t as f64).collect();
    resample(x, &positions)
}

fn resample<S: Scalar>(x: &FeatureSequence<S>, positions: &[f64]) -> Result<FeatureSequence<S>> {
    let d = x.dim();
    let mut data = vec![S::zero(); positions.len() * d];
    for (t, &w) in positions.iter().enumerate() {
        interpolate_frame(x, w, &mut data[t * d..(t + 1) * d]);
    }
    FeatureSequence::with_shift(
        Tensor::new(vec![positions.len(), d], data)?,
        x.frame_shift_ms,
    )
}
