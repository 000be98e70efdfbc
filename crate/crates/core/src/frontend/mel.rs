use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{FeatureSequence, Waveform};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_mels: usize,
    pub floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            window_ms: 25.0,
            hop_ms: 10.0,
            n_mels: 80,
            floor: 1e-10,
        }
    }
}

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Edge frequencies of `n_mels` triangles spanning `0..sample_rate/2`.
fn mel_edges(n_mels: usize, sample_rate: u32) -> Vec<f64> {
    let top = hz_to_mel(f64::from(sample_rate) / 2.0);
    (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Center frequency (Hz) of each mel filter.
pub fn mel_center_frequencies(n_mels: usize, sample_rate: u32) -> Vec<f64> {
    mel_edges(n_mels, sample_rate)[1..=n_mels].to_vec()
}

fn filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let edges = mel_edges(n_mels, sample_rate);
    let bins = n_fft / 2 + 1;
    let bin_hz = f64::from(sample_rate) / n_fft as f64;
    (0..n_mels)
        .map(|m| {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= c {
                        (f - lo) / (c - lo)
                    } else {
                        (hi - f) / (hi - c)
                    }
                })
                .collect()
        })
        .collect()
}

/// Log-mel filterbank energies of a waveform: Hann window, power spectrum,
/// HTK triangles, `log(max(energy, floor))`. No centering or padding, so
/// `T = 1 + (N − win) / hop`.
pub fn log_mel<S: Scalar>(wave: &Waveform, cfg: &MelConfig) -> Result<FeatureSequence<S>> {
    let sr = f64::from(wave.sample_rate);
    let win = (cfg.window_ms * sr / 1000.0).round() as usize;
    let hop = (cfg.hop_ms * sr / 1000.0).round() as usize;
    if win == 0 || hop == 0 || cfg.n_mels == 0 {
        return Err(Error::Config(
            "mel window, hop and n_mels must be positive".into(),
        ));
    }
    if wave.len() < win {
        return Err(Error::TooShort {
            len: wave.len(),
            needed: win,
        });
    }
    let n_fft = win.next_power_of_two();
    let frames = 1 + (wave.len() - win) / hop;
    let window: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / win as f64).cos())
        .collect();
    let bank = filterbank(cfg.n_mels, n_fft, wave.sample_rate);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);

    let mut out = Vec::with_capacity(frames * cfg.n_mels);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for t in 0..frames {
        let seg = &wave.samples[t * hop..t * hop + win];
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(
                if i < win {
                    f64::from(seg[i]) * window[i]
                } else {
                    0.0
                },
                0.0,
            );
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..=n_fft / 2].iter().map(|c| c.norm_sqr()).collect();
        for filt in &bank {
            let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
            out.push(S::of(e.max(cfg.floor).ln()));
        }
    }
    FeatureSequence::with_shift(Tensor::new(vec![frames, cfg.n_mels], out)?, cfg.hop_ms)
}
