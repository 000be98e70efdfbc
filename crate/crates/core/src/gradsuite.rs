//! Finite-difference verification of the training objectives in f64:
//! joint network, contrastive loss, transducer loss, and the full
//! composite objective through a small model.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};

use crate::augment::{alignment_map, MaskPlan, Tempo};
use crate::autodiff::{grad_check_with, GradCheckOptions, ParamKind, ParamSet, Tape, Var};
use crate::encoder::{
    CSiamModel, Ctx, EncoderConfig, LabelEncoderConfig, Mode, ModelConfig, PredictorConfig,
};
use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::losses::{
    contrastive_loss_pairs, rnnt_loss, sample_pairs, ContrastiveBatch, ContrastivePairs,
    JointConfig, JointNetwork, RnntLattice,
};
use crate::rng::rng_for;
use crate::tensor::Tensor;
use crate::train::{augmented_branch, supervised_loss, target_branch, AugmentedView};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradComponent {
    Joint,
    Contrastive,
    Rnnt,
    Composite,
}

impl GradComponent {
    pub const ALL: [GradComponent; 4] =
        [Self::Joint, Self::Contrastive, Self::Rnnt, Self::Composite];

    pub fn name(self) -> &'static str {
        match self {
            Self::Joint => "joint",
            Self::Contrastive => "contrastive",
            Self::Rnnt => "rnnt",
            Self::Composite => "composite",
        }
    }

    /// Maximum accepted relative error.
    pub fn tolerance(self) -> f64 {
        match self {
            Self::Joint | Self::Contrastive => 1e-5,
            Self::Rnnt | Self::Composite => 1e-4,
        }
    }
}

impl fmt::Display for GradComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradComponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown component '{s}' (joint, contrastive, rnnt, composite)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentResult {
    pub component: GradComponent,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
}

impl ComponentResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = rng_for(seed, &[]);
    Tensor::from_fn(shape, |_| StandardNormal.sample(&mut rng))
}

/// Verifies one component. `sign_flip` negates the analytic gradient to
/// show the check detects a wrong pullback.
pub fn check_component(component: GradComponent, sign_flip: bool) -> Result<ComponentResult> {
    let opts = GradCheckOptions {
        eps: 1e-6,
        sign_flip,
        ..GradCheckOptions::default()
    };
    let report = match component {
        GradComponent::Joint => {
            let mut ps = ParamSet::<f64>::new();
            let joint = JointNetwork::new(
                &mut ps,
                "joint",
                4,
                3,
                &JointConfig { d_joint: 5 },
                4,
                &mut rng_for(1, &[]),
            )?;
            ps.add("a", randn(&[3, 4], 2), ParamKind::Weight)?;
            ps.add("l", randn(&[2, 3], 3), ParamKind::Weight)?;
            let c = randn(&[6, 4], 4);
            grad_check_with(
                |tape: &Tape<f64>, ps: &ParamSet<f64>| {
                    let ctx = Ctx::new(tape, ps, Mode::Eval, rng_for(0, &[]));
                    let a = tape.param(ps, ps.id_of("a")?);
                    let l = tape.param(ps, ps.id_of("l")?);
                    Ok(joint
                        .joint_logits(&ctx, a, l)?
                        .mul(tape.constant(c.clone()))?
                        .sum())
                },
                &ps,
                &opts,
            )?
        }
        GradComponent::Contrastive => {
            let mut ps = ParamSet::<f64>::new();
            ps.add("aug", randn(&[5, 4], 5), ParamKind::Weight)?;
            ps.add("target", randn(&[6, 4], 6), ParamKind::Weight)?;
            let pairs = ContrastivePairs {
                anchors: vec![0, 2, 3],
                candidates: vec![vec![1, 0, 4, 5], vec![2, 5, 1, 3], vec![4, 0, 2, 1]],
            };
            grad_check_with(
                |tape: &Tape<f64>, ps: &ParamSet<f64>| {
                    let a = tape.param(ps, ps.id_of("aug")?);
                    let q = tape.param(ps, ps.id_of("target")?);
                    contrastive_loss_pairs(a, q, &pairs, 0.5)
                },
                &ps,
                &opts,
            )?
        }
        GradComponent::Rnnt => {
            let mut ps = ParamSet::<f64>::new();
            ps.add("logits", randn(&[4 * 3, 5], 7), ParamKind::Weight)?;
            let lattice = RnntLattice {
                frames: 4,
                labels: vec![3, 1],
                blank: 0,
            };
            grad_check_with(
                |tape: &Tape<f64>, ps: &ParamSet<f64>| {
                    rnnt_loss(tape.param(ps, ps.id_of("logits")?), &lattice)
                },
                &ps,
                &opts,
            )?
        }
        GradComponent::Composite => composite(&opts)?,
    };
    Ok(ComponentResult {
        component,
        max_rel_error: report.max_rel_error,
        tolerance: component.tolerance(),
        checked: report.checked,
    })
}

/// A model small enough to perturb every parameter.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            input_dim: 3,
            n_blocks: 1,
            n_heads: 1,
            d_model: 4,
            d_ff: 6,
            d_value: 4,
            d_qk: 4,
            dropout_p: 0.0,
            rel_clip: 4,
            ..EncoderConfig::default()
        },
        label_encoder: LabelEncoderConfig {
            n_blocks: 1,
            d_model: 4,
            n_heads: 1,
            d_ff: 4,
            vocab_size: 4,
            blank: 0,
            dropout_p: 0.0,
        },
        predictor: PredictorConfig { n_blocks: 1 },
        joint: JointConfig { d_joint: 4 },
    }
}

/// `rnnt(sup) + contrastive(aug, sg(target))` through every module. The
/// target branch is evaluated once at the base parameters, which is what
/// the stop-gradient means for a finite-difference probe.
fn composite(opts: &GradCheckOptions) -> Result<crate::autodiff::GradCheckReport> {
    let model = CSiamModel::<f64>::new(tiny_model_config(), 13)?;
    let sup = FeatureSequence::new(randn(&[12, 3], 8))?;
    let x = FeatureSequence::new(randn(&[16, 3], 9))?;
    let mask = MaskPlan::new(16, vec![(4, 8)])?;
    let mut features = x.clone();
    for t in 4..12 {
        features.frames_mut().data_mut()[t * 3..(t + 1) * 3].fill(0.0);
    }
    let view = AugmentedView {
        features,
        tempo: Tempo::Identity,
        batch: ContrastiveBatch::from_mask(&mask, 4, alignment_map(&Tempo::Identity, 4, 4, 4)?),
        mask,
    };
    let pairs = sample_pairs(&view.batch, 4, &mut rng_for(10, &[]))?;
    let target = {
        let tape = Tape::new();
        target_branch(&model, &tape, &model.params, &x, false)?.tensor()
    };
    grad_check_with(
        |tape: &Tape<f64>, ps: &ParamSet<f64>| -> Result<Var<'_, f64>> {
            let ctx = Ctx::new(tape, ps, Mode::Eval, rng_for(0, &[]));
            let r = supervised_loss(&model, &ctx, &sup, &[1, 3])?;
            let pred = augmented_branch(&model, &ctx, &view)?;
            let c = contrastive_loss_pairs(pred, tape.constant(target.clone()), &pairs, 0.5)?;
            r.add(c)
        },
        &model.params,
        opts,
    )
}
