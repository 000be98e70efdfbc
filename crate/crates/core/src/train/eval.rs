//! Contrastive retrieval accuracy on clean and on noise inputs.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::encoder::{CSiamModel, Ctx, Mode};
use crate::error::Result;
use crate::frontend::FeatureSequence;
use crate::losses::{retrieval_accuracy, sample_pairs};
use crate::rng::rng_for;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{augment_view, augmented_branch, target_branch, RunConfig};

const AUG_STREAM: u64 = 0x4556;
const NOISE_STREAM: u64 = 0x4e5a;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    /// Top-1 retrieval accuracy over all anchors, clean inputs.
    pub clean: f64,
    /// The same with every input replaced by standard Gaussian noise.
    pub noise: f64,
    /// Expected accuracy of a random ranking, `mean 1/(candidates)`.
    pub chance: f64,
    pub anchors: usize,
}

impl RetrievalReport {
    /// How much retrieval depends on the input content.
    pub fn input_dependence(&self) -> f64 {
        self.clean - self.noise
    }
}

fn accuracy<S: Scalar>(
    model: &CSiamModel<S>,
    x: &FeatureSequence<S>,
    cfg: &RunConfig,
    seed: u64,
    index: u64,
) -> Result<Option<(f64, usize, f64)>> {
    let mut rng = rng_for(seed, &[AUG_STREAM, index]);
    let view = augment_view(x, &cfg.augment, &cfg.model_config().encoder, &mut rng)?;
    if view.batch.anchors.is_empty() {
        return Ok(None);
    }
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &model.params, Mode::Eval, rng_for(0, &[]));
    let pred = augmented_branch(model, &ctx, &view)?.tensor();
    let target = target_branch(model, &tape, &model.params, x, false)?.tensor();
    let pairs = sample_pairs(&view.batch, cfg.loss.negatives, &mut rng)?;
    let chance = 1.0 / pairs.candidates[0].len() as f64;
    Ok(Some((
        retrieval_accuracy(&pred, &target, &pairs),
        pairs.anchors.len(),
        chance,
    )))
}

/// Runs the augmented and target branches (without dropout) on each
/// utterance and on a same-shaped Gaussian-noise input, using the same
/// augmentation draw and negatives for both.
pub fn retrieval_eval<S: Scalar>(
    model: &CSiamModel<S>,
    utterances: &[FeatureSequence<S>],
    cfg: &RunConfig,
    seed: u64,
) -> Result<RetrievalReport> {
    let (mut clean, mut noise, mut chance, mut total) = (0.0, 0.0, 0.0, 0usize);
    for (i, x) in utterances.iter().enumerate() {
        let mut nrng = rng_for(seed, &[NOISE_STREAM, i as u64]);
        let shape = x.frames().shape().to_vec();
        let z = FeatureSequence::new(Tensor::from_fn(&shape, |_| {
            S::of(StandardNormal.sample(&mut nrng))
        }))?;
        if let (Some((c, n, ch)), Some((zc, zn, _))) = (
            accuracy(model, x, cfg, seed, i as u64)?,
            accuracy(model, &z, cfg, seed, i as u64)?,
        ) {
            debug_assert_eq!(n, zn);
            clean += c * n as f64;
            noise += zc * zn as f64;
            chance += ch * n as f64;
            total += n;
        }
    }
    let d = total.max(1) as f64;
    Ok(RetrievalReport {
        clean: clean / d,
        noise: noise / d,
        chance: chance / d,
        anchors: total,
    })
}
