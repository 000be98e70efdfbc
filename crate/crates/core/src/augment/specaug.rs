use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::scalar::Scalar;

/// Frequency/time masking for the supervised path only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpecAugmentConfig {
    pub n_freq_masks: usize,
    pub freq_mask_size: usize,
    pub n_time_masks: usize,
    pub time_mask_max_ratio: f64,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        Self {
            n_freq_masks: 2,
            freq_mask_size: 27,
            n_time_masks: 10,
            time_mask_max_ratio: 0.05,
        }
    }
}

impl SpecAugmentConfig {
    pub fn disabled() -> Self {
        Self {
            n_freq_masks: 0,
            freq_mask_size: 0,
            n_time_masks: 0,
            time_mask_max_ratio: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.time_mask_max_ratio) {
            return Err(Error::Config(
                "time_mask_max_ratio must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Zeroes `n_freq_masks` bands of width `U[0, freq_mask_size]` and
/// `n_time_masks` spans of length `U[0, ⌊ratio·T⌋]`.
pub fn spec_augment<S: Scalar>(
    x: &FeatureSequence<S>,
    cfg: &SpecAugmentConfig,
    rng: &mut impl Rng,
) -> Result<FeatureSequence<S>> {
    cfg.validate()?;
    let (t_len, d) = (x.len(), x.dim());
    let mut y = x.clone();
    let data = y.frames_mut().data_mut();
    for _ in 0..cfg.n_freq_masks {
        let width = rng.random_range(0..=cfg.freq_mask_size.min(d));
        let f0 = rng.random_range(0..=d - width);
        for t in 0..t_len {
            data[t * d + f0..t * d + f0 + width]
                .iter_mut()
                .for_each(|v| *v = S::zero());
        }
    }
    let max_len = (cfg.time_mask_max_ratio * t_len as f64).floor() as usize;
    for _ in 0..cfg.n_time_masks {
        let len = rng.random_range(0..=max_len);
        let t0 = rng.random_range(0..=t_len - len);
        data[t0 * d..(t0 + len) * d]
            .iter_mut()
            .for_each(|v| *v = S::zero());
    }
    Ok(y)
}
