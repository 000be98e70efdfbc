//! Waveform-similarity overlap-add (WSOLA) tempo change.
//!
//! Output frames are laid down at a fixed synthesis hop of half a window.
//! Each frame's input position starts from the ideal `α · output_time` and
//! is shifted within `±tolerance` to the offset whose segment best matches
//! (normalised cross-correlation) the natural continuation of the previous
//! frame. Hann windows at 50% overlap sum to one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::Waveform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniformTempoConfig {
    pub alpha_range: (f64, f64),
    pub window_ms: f64,
    pub tolerance_ms: f64,
}

impl Default for UniformTempoConfig {
    fn default() -> Self {
        Self {
            alpha_range: (0.85, 1.15),
            window_ms: 25.0,
            tolerance_ms: 7.5,
        }
    }
}

impl UniformTempoConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.alpha_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!(
                "alpha range must satisfy 0 < lo ≤ hi, got {lo}..{hi}"
            )));
        }
        if !(self.window_ms > 0.0) || !(self.tolerance_ms >= 0.0) {
            return Err(Error::Config(
                "WSOLA window must be > 0 and tolerance ≥ 0".into(),
            ));
        }
        Ok(())
    }

    /// Window length in samples, rounded to an even number.
    pub fn window_samples(&self, sample_rate: u32) -> usize {
        let w = (self.window_ms * f64::from(sample_rate) / 1000.0).round() as usize;
        (w + (w & 1)).max(2)
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        self.window_samples(sample_rate) / 2
    }
}

/// Changes tempo by `alpha` (> 1 speeds up). Output length is
/// `round(N / alpha)`.
pub fn wsola_stretch(wave: &Waveform, alpha: f64, cfg: &UniformTempoConfig) -> Result<Waveform> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Config(format!(
            "tempo ratio must be positive, got {alpha}"
        )));
    }
    cfg.validate()?;
    let win = cfg.window_samples(wave.sample_rate);
    let hop = win / 2;
    let tol = (cfg.tolerance_ms * f64::from(wave.sample_rate) / 1000.0).round() as isize;
    let x = &wave.samples;
    let n = x.len();
    if n < 2 * win {
        return Err(Error::TooShort {
            len: n,
            needed: 2 * win,
        });
    }
    let at = |i: isize| -> f64 {
        if i >= 0 && (i as usize) < n {
            f64::from(x[i as usize])
        } else {
            0.0
        }
    };
    let window: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
        .collect();

    let out_len = (n as f64 / alpha).round() as usize;
    let mut out = vec![0.0f64; out_len];
    let mut wsum = vec![0.0f64; out_len];
    let last_start = n as isize - 1;
    let mut prev: isize = 0;
    let mut k = 0usize;
    while k * hop < out_len {
        let pos = if k == 0 {
            0
        } else {
            let ideal = (alpha * (k * hop) as f64).round() as isize;
            let natural = prev + hop as isize;
            let mut best = ideal.clamp(0, last_start);
            let mut best_score = f64::NEG_INFINITY;
            // |δ| ascending so ties keep the smallest shift
            for step in 0..=2 * tol {
                let delta = if step % 2 == 0 {
                    step / 2
                } else {
                    -(step + 1) / 2
                };
                let c = (ideal + delta).clamp(0, last_start);
                let (mut dot, mut energy) = (0.0, 0.0);
                for i in 0..win as isize {
                    let v = at(c + i);
                    dot += v * at(natural + i);
                    energy += v * v;
                }
                let score = if energy > 0.0 {
                    dot / energy.sqrt()
                } else {
                    0.0
                };
                if score > best_score {
                    best_score = score;
                    best = c;
                }
            }
            best
        };
        let start = k * hop;
        for i in 0..win.min(out_len - start) {
            out[start + i] += at(pos + i as isize) * window[i];
            wsum[start + i] += window[i];
        }
        prev = pos;
        k += 1;
    }
    let samples = out
        .iter()
        .zip(&wsum)
        .map(|(&o, &w)| if w > 1e-8 { (o / w) as f32 } else { 0.0 })
        .collect();
    Waveform::new(samples, wave.sample_rate)
}
