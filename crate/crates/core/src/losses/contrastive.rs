//! Time-aligned contrastive loss.
//!
//! For each masked augmented frame `t` the positive is the target frame
//! `t' = align(t)`; negatives are other target frames drawn from the masked
//! region of the same utterance. The loss is softmax cross-entropy over
//! cosine similarities scaled by `1/τ`, averaged over anchors.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{AlignmentMap, MaskPlan};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub negatives: usize,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: 0.1,
            negatives: 32,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Anchors (masked augmented downsampled frames) and their alignment to
/// the target branch.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub anchors: Vec<usize>,
    pub alignment: AlignmentMap,
}

impl ContrastiveBatch {
    /// Anchors are the downsampled frames at least half covered by the mask.
    pub fn from_mask(plan: &MaskPlan, stride: usize, alignment: AlignmentMap) -> Self {
        Self {
            anchors: masked_anchors(plan, stride, alignment.len()),
            alignment,
        }
    }
}

pub fn masked_anchors(plan: &MaskPlan, stride: usize, len_ds: usize) -> Vec<usize> {
    plan.downsampled(stride, len_ds)
        .into_iter()
        .enumerate()
        .filter_map(|(i, m)| m.then_some(i))
        .collect()
}

/// Per anchor: the candidate target rows, positive first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastivePairs {
    pub anchors: Vec<usize>,
    pub candidates: Vec<Vec<usize>>,
}

/// Draws negatives uniformly without replacement from the masked target
/// frames (the alignment image of the anchors), excluding each positive.
/// The count is `min(K, pool − 1)` so every anchor gets the same number.
pub fn sample_pairs(
    batch: &ContrastiveBatch,
    negatives: usize,
    rng: &mut impl Rng,
) -> Result<ContrastivePairs> {
    if batch.anchors.is_empty() {
        return Err(Error::EmptyAnchors);
    }
    let mut pool: Vec<usize> = batch
        .anchors
        .iter()
        .map(|&t| batch.alignment.get(t))
        .collect();
    pool.sort_unstable();
    pool.dedup();
    let k = negatives.min(pool.len() - 1);
    let candidates = batch
        .anchors
        .iter()
        .map(|&t| {
            let pos = batch.alignment.get(t);
            let others: Vec<usize> = pool.iter().copied().filter(|&q| q != pos).collect();
            let mut c = Vec::with_capacity(k + 1);
            c.push(pos);
            c.extend(sample(rng, others.len(), k).into_iter().map(|i| others[i]));
            c
        })
        .collect();
    Ok(ContrastivePairs {
        anchors: batch.anchors.clone(),
        candidates,
    })
}

/// Mean over anchors of `−log softmax(sim(a_t, ·)/τ)[positive]`.
/// `aug` and `targets` are `[T_aug, d]` and `[T_target, d]`.
pub fn contrastive_loss_pairs<'t, S: Scalar>(
    aug: Var<'t, S>,
    targets: Var<'t, S>,
    pairs: &ContrastivePairs,
    tau: f64,
) -> Result<Var<'t, S>> {
    let n = pairs.anchors.len();
    if n == 0 {
        return Err(Error::EmptyAnchors);
    }
    let width = pairs.candidates[0].len();
    if pairs.candidates.len() != n
        || pairs.candidates.iter().any(|c| c.len() != width)
        || width == 0
    {
        return Err(Error::InvalidTensor(
            "every anchor needs the same non-zero candidate count".into(),
        ));
    }
    let a = aug.gather_rows(&pairs.anchors)?.l2_normalize_rows()?;
    let flat: Vec<usize> = pairs.candidates.iter().flatten().copied().collect();
    let q = targets.gather_rows(&flat)?.l2_normalize_rows()?;
    let repeat: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, width)).collect();
    let sims = a
        .gather_rows(&repeat)?
        .mul(q)?
        .sum_cols()
        .reshape(&[n, width])?;
    let logp = sims.scale(S::of(1.0 / tau)).log_softmax();
    Ok(logp.slice_cols(0, 1)?.mean().neg())
}

/// Samples negatives and evaluates the loss.
pub fn contrastive_loss<'t, S: Scalar>(
    aug: Var<'t, S>,
    targets: Var<'t, S>,
    batch: &ContrastiveBatch,
    cfg: &ContrastiveConfig,
    rng: &mut impl Rng,
) -> Result<Var<'t, S>> {
    cfg.validate()?;
    let pairs = sample_pairs(batch, cfg.negatives, rng)?;
    contrastive_loss_pairs(aug, targets, &pairs, cfg.tau)
}

/// Fraction of anchors whose positive has strictly the highest cosine
/// similarity among its candidates.
pub fn retrieval_accuracy<S: Scalar>(
    aug: &Tensor<S>,
    targets: &Tensor<S>,
    pairs: &ContrastivePairs,
) -> f64 {
    let cos = |x: &[S], y: &[S]| -> f64 {
        let dot: f64 = x.iter().zip(y).map(|(a, b)| (*a * *b).to_f64_lossy()).sum();
        let nx: f64 = x
            .iter()
            .map(|a| (*a * *a).to_f64_lossy())
            .sum::<f64>()
            .sqrt();
        let ny: f64 = y
            .iter()
            .map(|a| (*a * *a).to_f64_lossy())
            .sum::<f64>()
            .sqrt();
        dot / (nx * ny).max(f64::MIN_POSITIVE)
    };
    let hits = pairs
        .anchors
        .iter()
        .zip(&pairs.candidates)
        .filter(|(&t, cands)| {
            let a = aug.row(t);
            let pos = cos(a, targets.row(cands[0]));
            cands[1..].iter().all(|&c| cos(a, targets.row(c)) < pos)
        })
        .count();
    hits as f64 / pairs.anchors.len().max(1) as f64
}
