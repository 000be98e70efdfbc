//! One joint optimisation step: supervised transducer loss plus the
//! contrastive loss between an augmented branch and a clean,
//! gradient-stopped target branch.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{
    alignment_map, apply_masks, apply_warp, sample_masks, sample_warp, spec_augment,
    tempo_features, MaskPlan, Tempo,
};
use crate::autodiff::{ParamSet, Tape, Var};
use crate::encoder::{CSiamModel, Ctx, EncoderConfig, Mode};
use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::losses::{
    contrastive_loss, rnnt_loss, ContrastiveBatch, ContrastiveConfig, RnntLattice,
};
use crate::rng::{rng_for, Rng as ChaRng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::optim::{
    adam_update, add_variational_noise, clip_global_norm, lr_at, AdamHyper, AdamState,
};
use crate::train::{AugmentConfig, RunConfig, TempoMode};

const SUP_STREAM: u64 = 0x5355;
const UNSUP_STREAM: u64 = 0x554e;
const NOISE_STREAM: u64 = 0x4e4f;

/// Parameters, optimiser moments and the number of completed steps. All
/// randomness is derived from `(seed, step, utterance)`, so no generator
/// state needs to be stored.
#[derive(Debug, Clone)]
pub struct TrainState<S> {
    pub step: u64,
    pub model: CSiamModel<S>,
    pub adam: AdamState<S>,
}

impl<S: Scalar> TrainState<S> {
    pub fn new(model: CSiamModel<S>) -> Self {
        let adam = AdamState::zeros_like(&model.params);
        Self {
            step: 0,
            model,
            adam,
        }
    }
}

/// A labelled utterance; `labels` are vocabulary ids (never blank).
#[derive(Debug, Clone)]
pub struct SupervisedExample<S> {
    pub features: FeatureSequence<S>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Batch<S> {
    pub sup: Vec<SupervisedExample<S>>,
    pub unsup: Vec<FeatureSequence<S>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepOptions {
    /// Test-only: lets contrastive gradients flow into the target branch.
    pub bypass_stop_gradient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub rnnt_loss: f64,
    pub contrastive_loss: f64,
    pub total_loss: f64,
    pub grad_norm_pre_clip: f64,
    pub lr: f64,
    pub wall_ms: u64,
    /// True when the step produced a non-finite value and left the
    /// parameters unchanged.
    pub skipped: bool,
}

/// The augmented-branch input and its correspondence to the target branch.
#[derive(Debug, Clone)]
pub struct AugmentedView<S> {
    pub features: FeatureSequence<S>,
    pub tempo: Tempo,
    pub mask: MaskPlan,
    pub batch: ContrastiveBatch,
}

/// Tempo change (or time warp), then span masking; anchors are the masked
/// downsampled frames.
pub fn augment_view<S: Scalar>(
    x: &FeatureSequence<S>,
    aug: &AugmentConfig,
    enc: &EncoderConfig,
    rng: &mut impl Rng,
) -> Result<AugmentedView<S>> {
    let (tempo, moved) = match aug.tempo {
        TempoMode::None => (Tempo::Identity, x.clone()),
        TempoMode::Warp => {
            let w = sample_warp(
                rng,
                x.len(),
                aug.warp_order,
                aug.warp_sigma,
                aug.warp_max_retries,
            )?;
            let y = apply_warp(x, &w)?;
            (Tempo::Warp(w), y)
        }
        TempoMode::Uniform => {
            let (lo, hi) = aug.uniform.alpha_range;
            let alpha = if lo < hi {
                rng.random_range(lo..=hi)
            } else {
                lo
            };
            (Tempo::Uniform { alpha }, tempo_features(x, alpha)?)
        }
    };
    let mask = sample_masks(rng, moved.len(), aug.mask_prob, aug.mask_span);
    let features = apply_masks(&moved, &mask)?;
    let stride = enc.downsampling();
    let alignment = alignment_map(
        &tempo,
        stride,
        enc.output_len(features.len()),
        enc.output_len(x.len()),
    )?;
    let batch = ContrastiveBatch::from_mask(&mask, stride, alignment);
    Ok(AugmentedView {
        features,
        tempo,
        mask,
        batch,
    })
}

/// Transducer loss of one labelled utterance.
pub fn supervised_loss<'t, S: Scalar>(
    model: &CSiamModel<S>,
    ctx: &Ctx<'_, 't, S>,
    features: &FeatureSequence<S>,
    labels: &[usize],
) -> Result<Var<'t, S>> {
    let top = model.encode_audio(ctx, features)?.top;
    let l = model.encode_labels(ctx, labels)?;
    let logits = model.joint.joint_logits(ctx, top, l)?;
    let lattice = RnntLattice {
        frames: top.shape()[0],
        labels: labels.to_vec(),
        blank: model.blank(),
    };
    rnnt_loss(logits, &lattice)
}

/// `predict(encode(view))` in training mode.
pub fn augmented_branch<'t, S: Scalar>(
    model: &CSiamModel<S>,
    ctx: &Ctx<'_, 't, S>,
    view: &AugmentedView<S>,
) -> Result<Var<'t, S>> {
    let top = model.encode_audio(ctx, &view.features)?.top;
    model.predict(ctx, top)
}

/// Clean `encode(x)` without dropout, behind a stop-gradient unless
/// `bypass_stop_gradient`.
pub fn target_branch<'t, S: Scalar>(
    model: &CSiamModel<S>,
    tape: &'t Tape<S>,
    params: &ParamSet<S>,
    x: &FeatureSequence<S>,
    bypass_stop_gradient: bool,
) -> Result<Var<'t, S>> {
    let ctx = Ctx::new(tape, params, Mode::Eval, rng_for(0, &[]));
    let top = model.encode_audio(&ctx, x)?.top;
    Ok(if bypass_stop_gradient {
        top
    } else {
        top.stop_gradient()
    })
}

/// Contrastive loss between the augmented and target branches.
#[allow(clippy::too_many_arguments)]
pub fn siamese_loss<'t, S: Scalar>(
    model: &CSiamModel<S>,
    tape: &'t Tape<S>,
    params: &ParamSet<S>,
    x: &FeatureSequence<S>,
    view: &AugmentedView<S>,
    cfg: &ContrastiveConfig,
    rng: &mut ChaRng,
    bypass_stop_gradient: bool,
) -> Result<Var<'t, S>> {
    let ctx = Ctx::new(tape, params, Mode::Train, rng_for(rng.random(), &[]));
    let predicted = augmented_branch(model, &ctx, view)?;
    let target = target_branch(model, tape, params, x, bypass_stop_gradient)?;
    contrastive_loss(predicted, target, &view.batch, cfg, rng)
}

type UttResult<S> = Option<(f64, Vec<Tensor<S>>)>;

/// Mean transducer loss, mean contrastive loss, and the combined gradient.
pub type BatchGradients<S> = (f64, f64, Vec<Tensor<S>>);

fn finite_or_none<S: Scalar>(r: Result<(f64, Vec<Tensor<S>>)>) -> Result<UttResult<S>> {
    match r {
        Ok((l, g)) if l.is_finite() && g.iter().all(Tensor::is_finite) => Ok(Some((l, g))),
        Ok(_) | Err(Error::NonFinite(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn sup_gradients<S: Scalar>(
    model: &CSiamModel<S>,
    params: &ParamSet<S>,
    ex: &SupervisedExample<S>,
    cfg: &RunConfig,
    mut rng: ChaRng,
) -> Result<(f64, Vec<Tensor<S>>)> {
    let x = if cfg.augment.spec_augment_enabled {
        spec_augment(&ex.features, &cfg.augment.spec_augment, &mut rng)?
    } else {
        ex.features.clone()
    };
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, params, Mode::Train, rng);
    let loss = supervised_loss(model, &ctx, &x, &ex.labels)?;
    let value = loss.item().to_f64_lossy();
    Ok((value, tape.backward(loss)?.param_grads(params)))
}

fn unsup_gradients<S: Scalar>(
    model: &CSiamModel<S>,
    params: &ParamSet<S>,
    x: &FeatureSequence<S>,
    cfg: &RunConfig,
    mut rng: ChaRng,
    opts: &StepOptions,
) -> Result<Option<(f64, Vec<Tensor<S>>)>> {
    let view = augment_view(x, &cfg.augment, &cfg.model_config().encoder, &mut rng)?;
    if view.batch.anchors.is_empty() {
        return Ok(None);
    }
    let tape = Tape::new();
    let loss = siamese_loss(
        model,
        &tape,
        params,
        x,
        &view,
        &cfg.loss.contrastive(),
        &mut rng,
        opts.bypass_stop_gradient,
    )?;
    let value = loss.item().to_f64_lossy();
    Ok(Some((value, tape.backward(loss)?.param_grads(params))))
}

fn accumulate<S: Scalar>(into: &mut [Tensor<S>], g: &[Tensor<S>], k: S) {
    for (a, b) in into.iter_mut().zip(g) {
        for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
            *x += k * *y;
        }
    }
}

/// Gradients of `mean(rnnt) + λ·mean(contrastive)` over the batch, with the
/// two mean losses. Utterances are processed in parallel and reduced in
/// batch order, so the result does not depend on scheduling.
pub fn batch_gradients<S: Scalar>(
    model: &CSiamModel<S>,
    params: &ParamSet<S>,
    batch: &Batch<S>,
    cfg: &RunConfig,
    step: u64,
    opts: &StepOptions,
) -> Result<Option<BatchGradients<S>>> {
    let seed = cfg.train.seed;
    let sup: Vec<UttResult<S>> = batch
        .sup
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            finite_or_none(sup_gradients(
                model,
                params,
                ex,
                cfg,
                rng_for(seed, &[SUP_STREAM, step, i as u64]),
            ))
        })
        .collect::<Result<_>>()?;
    let lambda = cfg.loss.lambda_unsup;
    let unsup: Vec<Option<UttResult<S>>> = if lambda > 0.0 {
        batch
            .unsup
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let rng = rng_for(seed, &[UNSUP_STREAM, step, i as u64]);
                match unsup_gradients(model, params, x, cfg, rng, opts) {
                    Ok(None) => Ok(None),
                    Ok(Some(r)) => finite_or_none(Ok(r)).map(Some),
                    Err(Error::NonFinite(_)) => Ok(Some(None)),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    if sup.iter().any(Option::is_none) || unsup.iter().any(|u| matches!(u, Some(None))) {
        return Ok(None);
    }

    let mut grads: Vec<Tensor<S>> = params
        .iter()
        .map(|(_, p)| Tensor::zeros(p.tensor.shape()))
        .collect();
    let mut rnnt = 0.0;
    if !sup.is_empty() {
        let k = 1.0 / sup.len() as f64;
        for (l, g) in sup.iter().flatten() {
            rnnt += l * k;
            accumulate(&mut grads, g, S::of(k));
        }
    }
    let valid: Vec<&(f64, Vec<Tensor<S>>)> = unsup.iter().flatten().flatten().collect();
    let mut contrastive = 0.0;
    if !valid.is_empty() {
        let k = 1.0 / valid.len() as f64;
        for (l, g) in valid {
            contrastive += l * k;
            accumulate(&mut grads, g, S::of(lambda * k));
        }
    }
    Ok(Some((rnnt, contrastive, grads)))
}

/// One Adam update on the joint objective. A non-finite loss or gradient
/// skips the update (the step counter still advances).
pub fn train_step<S: Scalar>(
    state: &TrainState<S>,
    batch: &Batch<S>,
    cfg: &RunConfig,
    opts: &StepOptions,
) -> Result<(TrainState<S>, MetricsRecord)> {
    let start = Instant::now();
    let t = state.step + 1;
    let tc = &cfg.train;
    let lr = lr_at(t, tc);
    let noisy = add_variational_noise(
        &state.model.params,
        tc.variational_noise_std,
        state.step,
        tc.variational_noise_start_step,
        &mut rng_for(tc.seed, &[NOISE_STREAM, state.step]),
    )?;
    let mut next = state.clone();
    next.step = t;
    let mut record = MetricsRecord {
        step: t,
        rnnt_loss: 0.0,
        contrastive_loss: 0.0,
        total_loss: 0.0,
        grad_norm_pre_clip: 0.0,
        lr,
        wall_ms: 0,
        skipped: true,
    };
    if let Some((rnnt, contrastive, mut grads)) =
        batch_gradients(&state.model, &noisy, batch, cfg, state.step, opts)?
    {
        let total = rnnt + cfg.loss.lambda_unsup * contrastive;
        if let Ok(norm) = clip_global_norm(&mut grads, tc.grad_norm_limit) {
            if total.is_finite() {
                adam_update(
                    &mut next.model.params,
                    &mut next.adam,
                    &grads,
                    t,
                    &AdamHyper::from_config(tc, lr),
                )?;
                record = MetricsRecord {
                    rnnt_loss: rnnt,
                    contrastive_loss: contrastive,
                    total_loss: total,
                    grad_norm_pre_clip: norm,
                    skipped: false,
                    ..record
                };
            }
        }
    }
    if tc.record_wall_time {
        record.wall_ms = start.elapsed().as_millis() as u64;
    }
    if record.skipped {
        log::warn!("step {t}: non-finite loss or gradient, update skipped");
    }
    Ok((next, record))
}
