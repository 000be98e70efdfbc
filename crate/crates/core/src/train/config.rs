//! Run configuration: one struct per `[section]` of the config file.

use serde::{Deserialize, Serialize};

use crate::augment::{SpecAugmentConfig, UniformTempoConfig};
use crate::encoder::{EncoderConfig, LabelEncoderConfig, ModelConfig, PredictorConfig};
use crate::error::{Error, Result};
use crate::frontend::SyntheticCorpusSpec;
use crate::losses::{ContrastiveConfig, JointConfig, LossWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub utterance_length_range: (usize, usize),
    pub frames_per_symbol_range: (usize, usize),
    pub noise_std: f64,
    pub seed: u64,
    /// Labelled utterances (indices `0..num_supervised`).
    pub num_supervised: usize,
    /// Unlabelled utterances (the following `num_unsupervised` indices).
    pub num_unsupervised: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SyntheticCorpusSpec::default();
        Self {
            num_classes: s.num_classes,
            dim: s.dim,
            utterance_length_range: s.utterance_length_range,
            frames_per_symbol_range: s.frames_per_symbol_range,
            noise_std: s.noise_std,
            seed: s.seed,
            num_supervised: 64,
            num_unsupervised: 256,
        }
    }
}

impl DataConfig {
    pub fn corpus_spec(&self) -> SyntheticCorpusSpec {
        SyntheticCorpusSpec {
            num_classes: self.num_classes,
            dim: self.dim,
            utterance_length_range: self.utterance_length_range,
            frames_per_symbol_range: self.frames_per_symbol_range,
            noise_std: self.noise_std,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TempoMode {
    None,
    /// Sinusoidal time warp of the feature trajectories.
    Warp,
    /// Uniform tempo ratio drawn per utterance.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub tempo: TempoMode,
    pub warp_order: usize,
    pub warp_sigma: f64,
    pub warp_max_retries: usize,
    pub uniform: UniformTempoConfig,
    pub mask_prob: f64,
    pub mask_span: usize,
    pub spec_augment_enabled: bool,
    pub spec_augment: SpecAugmentConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            tempo: TempoMode::Warp,
            warp_order: 5,
            warp_sigma: 0.2,
            warp_max_retries: 100,
            uniform: UniformTempoConfig::default(),
            mask_prob: 0.016,
            mask_span: 28,
            spec_augment_enabled: true,
            spec_augment: SpecAugmentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tau: f64,
    pub negatives: usize,
    pub lambda_unsup: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        let c = ContrastiveConfig::default();
        Self {
            tau: c.tau,
            negatives: c.negatives,
            lambda_unsup: LossWeights::default().lambda_unsup,
        }
    }
}

impl LossConfig {
    pub fn contrastive(&self) -> ContrastiveConfig {
        ContrastiveConfig {
            tau: self.tau,
            negatives: self.negatives,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_unsup: self.lambda_unsup,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub decay_end_step: u64,
    pub final_lr: f64,
    pub grad_norm_limit: f64,
    pub variational_noise_std: f64,
    pub variational_noise_start_step: u64,
    pub l2_weight: f64,
    pub batch_size_sup: usize,
    pub batch_size_unsup: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Write real wall-clock times into metrics (makes metric files
    /// run-dependent).
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 3e-4,
            warmup_steps: 500,
            decay_end_step: 10_000,
            final_lr: 2.5e-6,
            grad_norm_limit: 60.0,
            variational_noise_std: 0.02,
            variational_noise_start_step: 4000,
            l2_weight: 1.5e-4,
            batch_size_sup: 8,
            batch_size_unsup: 8,
            total_steps: 3000,
            seed: 7,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-9,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    /// Schedule values from the full-scale recipe.
    pub fn full_scale() -> Self {
        Self {
            peak_lr: 2e-3,
            warmup_steps: 10_000,
            decay_end_step: 200_000,
            final_lr: 2.5e-6,
            total_steps: 200_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps >= self.decay_end_step {
            return Err(Error::Config(
                "warmup_steps must be < decay_end_step".into(),
            ));
        }
        if !(self.peak_lr > 0.0 && self.final_lr > 0.0 && self.grad_norm_limit > 0.0) {
            return Err(Error::Config(
                "learning rates and grad_norm_limit must be > 0".into(),
            ));
        }
        if !(self.variational_noise_std >= 0.0 && self.l2_weight >= 0.0) {
            return Err(Error::Config("noise std and l2 weight must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Every section of a run configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub label_encoder: LabelEncoderConfig,
    pub predictor: PredictorConfig,
    pub joint: JointConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
}

impl RunConfig {
    /// Model layout with the input dimension and vocabulary (classes + blank)
    /// taken from `[data]`.
    pub fn model_config(&self) -> ModelConfig {
        let mut encoder = self.encoder.clone();
        encoder.input_dim = self.data.dim;
        let mut label_encoder = self.label_encoder.clone();
        label_encoder.vocab_size = self.data.num_classes + 1;
        label_encoder.blank = 0;
        ModelConfig {
            encoder,
            label_encoder,
            predictor: self.predictor.clone(),
            joint: self.joint.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.corpus_spec().validate()?;
        self.model_config().validate()?;
        self.loss.contrastive().validate()?;
        if !(self.loss.lambda_unsup >= 0.0) {
            return Err(Error::Config("lambda_unsup must be ≥ 0".into()));
        }
        self.train.validate()?;
        self.augment.uniform.validate()?;
        self.augment.spec_augment.validate()?;
        if !(0.0..=1.0).contains(&self.augment.mask_prob) {
            return Err(Error::Config("mask_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Compact settings used by the test suites: small model, short
    /// utterances, spans scaled to the utterance length.
    pub fn toy() -> Self {
        Self {
            data: DataConfig {
                num_classes: 6,
                dim: 12,
                utterance_length_range: (40, 64),
                frames_per_symbol_range: (4, 8),
                noise_std: 0.3,
                seed: 7,
                num_supervised: 32,
                num_unsupervised: 64,
            },
            encoder: EncoderConfig {
                n_blocks: 2,
                n_heads: 2,
                d_model: 32,
                d_ff: 64,
                d_value: 16,
                d_qk: 16,
                dropout_p: 0.0,
                rel_clip: 32,
                ..EncoderConfig::default()
            },
            label_encoder: LabelEncoderConfig {
                n_blocks: 1,
                d_model: 32,
                n_heads: 2,
                d_ff: 64,
                dropout_p: 0.0,
                ..LabelEncoderConfig::default()
            },
            predictor: PredictorConfig { n_blocks: 1 },
            joint: JointConfig { d_joint: 32 },
            loss: LossConfig {
                tau: 0.1,
                negatives: 8,
                lambda_unsup: 1.0,
            },
            train: TrainConfig {
                variational_noise_std: 0.0,
                l2_weight: 0.0,
                batch_size_sup: 4,
                batch_size_unsup: 4,
                total_steps: 3000,
                ..TrainConfig::default()
            },
            augment: AugmentConfig {
                mask_prob: 0.05,
                mask_span: 8,
                spec_augment: SpecAugmentConfig {
                    n_freq_masks: 1,
                    freq_mask_size: 3,
                    n_time_masks: 2,
                    time_mask_max_ratio: 0.05,
                },
                ..AugmentConfig::default()
            },
        }
    }
}
