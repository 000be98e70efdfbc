//! Correspondence between augmented-branch and target-branch frames after
//! the encoder's downsampling.

use crate::augment::WarpFunction;
use crate::error::{Error, Result};

/// The temporal augmentation applied to the augmented branch.
#[derive(Debug, Clone, PartialEq)]
pub enum Tempo {
    Identity,
    /// Non-uniform: augmented frame `t` holds target time `w(t)`.
    Warp(WarpFunction),
    /// Uniform: augmented frame `t` holds target time `α·t`.
    Uniform {
        alpha: f64,
    },
}

fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Target downsampled index matched to augmented downsampled index `t_ds`.
pub fn align_index(
    tempo: &Tempo,
    t_ds: usize,
    stride: usize,
    aug_len_ds: usize,
    target_len_ds: usize,
) -> Result<usize> {
    if t_ds >= aug_len_ds {
        return Err(Error::OutOfRange {
            index: t_ds,
            len: aug_len_ds,
        });
    }
    if target_len_ds == 0 {
        return Err(Error::Config("empty target sequence".into()));
    }
    let target = match tempo {
        Tempo::Identity => t_ds as f64,
        Tempo::Warp(w) => {
            let t = ((stride * t_ds) as f64).min((w.len() - 1) as f64);
            round_half_up(w.eval(t)? / stride as f64)
        }
        Tempo::Uniform { alpha } => round_half_up(alpha * (stride * t_ds) as f64 / stride as f64),
    };
    Ok((target.max(0.0) as usize).min(target_len_ds - 1))
}

/// `t_ds → t'_ds` for every augmented downsampled frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentMap {
    targets: Vec<usize>,
    target_len: usize,
}

impl AlignmentMap {
    pub fn identity(len: usize) -> Self {
        Self {
            targets: (0..len).collect(),
            target_len: len,
        }
    }

    pub fn get(&self, t_ds: usize) -> usize {
        self.targets[t_ds]
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.targets
    }

    pub fn is_monotone(&self) -> bool {
        self.targets.windows(2).all(|p| p[0] <= p[1])
    }
}

pub fn alignment_map(
    tempo: &Tempo,
    stride: usize,
    aug_len_ds: usize,
    target_len_ds: usize,
) -> Result<AlignmentMap> {
    let targets = (0..aug_len_ds)
        .map(|t| align_index(tempo, t, stride, aug_len_ds, target_len_ds))
        .collect::<Result<Vec<_>>>()?;
    Ok(AlignmentMap {
        targets,
        target_len: target_len_ds,
    })
}
