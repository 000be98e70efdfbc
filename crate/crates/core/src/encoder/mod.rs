//! Audio encoder (two stride-2 convolutions + relative-attention transformer
//! blocks), causal label encoder, and the augmented-branch prediction network.

mod layers;

pub use layers::{
    causal_mask, key_padding_mask, AttentionDims, BlockDims, Ctx, LayerNorm, Linear, Mode,
    RelativeAttention, TransformerBlock, TransformerStack,
};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamKind, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::losses::{JointConfig, JointNetwork};
use crate::rng::Rng as ChaRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use layers::check_dim;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub n_conv: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub d_value: usize,
    pub d_qk: usize,
    pub dropout_p: f64,
    pub rel_clip: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 16,
            n_conv: 2,
            conv_kernel: 3,
            conv_stride: 2,
            n_blocks: 4,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            d_value: 16,
            d_qk: 16,
            dropout_p: 0.1,
            rel_clip: 64,
        }
    }
}

impl EncoderConfig {
    /// The 100M-parameter layout (20 blocks, 512 wide, 8 heads).
    pub fn full_scale() -> Self {
        Self {
            input_dim: 80,
            n_blocks: 20,
            n_heads: 8,
            d_model: 512,
            d_ff: 2048,
            d_value: 48,
            d_qk: 16,
            dropout_p: 0.3,
            rel_clip: 160,
            ..Self::default()
        }
    }

    pub fn downsampling(&self) -> usize {
        self.conv_stride.pow(self.n_conv as u32)
    }

    /// Output length after the convolution stack, ceil-divided per layer.
    pub fn output_len(&self, t: usize) -> usize {
        (0..self.n_conv).fold(t, |len, _| len.div_ceil(self.conv_stride))
    }

    pub fn validate(&self) -> Result<()> {
        if self.downsampling() != 4 {
            return Err(Error::Config(format!(
                "total downsampling must be 4, got {}^{}",
                self.conv_stride, self.n_conv
            )));
        }
        if [
            self.input_dim,
            self.n_heads,
            self.d_model,
            self.d_ff,
            self.d_value,
            self.d_qk,
            self.conv_kernel,
        ]
        .contains(&0)
        {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config("dropout_p must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn block_dims(&self) -> BlockDims {
        BlockDims {
            attention: AttentionDims {
                d_model: self.d_model,
                n_heads: self.n_heads,
                d_qk: self.d_qk,
                d_value: self.d_value,
                rel_clip: self.rel_clip,
            },
            d_ff: self.d_ff,
            dropout_p: self.dropout_p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelEncoderConfig {
    pub n_blocks: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Output vocabulary including blank.
    pub vocab_size: usize,
    pub blank: usize,
    pub dropout_p: f64,
}

impl Default for LabelEncoderConfig {
    fn default() -> Self {
        Self {
            n_blocks: 1,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            vocab_size: 9,
            blank: 0,
            dropout_p: 0.1,
        }
    }
}

impl LabelEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.blank >= self.vocab_size {
            return Err(Error::Config(
                "label vocabulary needs V > 1 and blank < V".into(),
            ));
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) || self.d_ff == 0 {
            return Err(Error::Config(
                "label encoder d_model must split evenly across heads".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub n_blocks: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self { n_blocks: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub label_encoder: LabelEncoderConfig,
    pub predictor: PredictorConfig,
    pub joint: JointConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.label_encoder.validate()?;
        if self.joint.d_joint == 0 {
            return Err(Error::Config("d_joint must be positive".into()));
        }
        Ok(())
    }
}

/// Per-layer encoder outputs on a tape: `layers[0]` is the convolution
/// output, `layers[i]` the output of block `i`; `top` is the final-norm
/// output of the last block.
#[derive(Debug, Clone)]
pub struct EncoderOutput<'t, S> {
    pub layers: Vec<Var<'t, S>>,
    pub top: Var<'t, S>,
}

/// Detached per-layer activations, `n_blocks + 1` matrices of `T_ds × d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderActivations<S> {
    pub layers: Vec<Tensor<S>>,
}

#[derive(Debug, Clone)]
struct ConvLayer {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
pub struct AudioEncoder {
    cfg: EncoderConfig,
    convs: Vec<ConvLayer>,
    pub stack: TransformerStack,
}

impl AudioEncoder {
    fn new<S: Scalar>(ps: &mut ParamSet<S>, cfg: &EncoderConfig, rng: &mut ChaRng) -> Result<Self> {
        let mut convs = Vec::with_capacity(cfg.n_conv);
        let mut c_in = cfg.input_dim;
        for i in 0..cfg.n_conv {
            convs.push(ConvLayer {
                w: ps.add_glorot(
                    format!("encoder.conv{i}.w"),
                    cfg.conv_kernel * c_in,
                    cfg.d_model,
                    rng,
                )?,
                b: ps.add(
                    format!("encoder.conv{i}.b"),
                    Tensor::zeros(&[cfg.d_model]),
                    ParamKind::Bias,
                )?,
            });
            c_in = cfg.d_model;
        }
        Ok(Self {
            cfg: cfg.clone(),
            convs,
            stack: TransformerStack::new(ps, "encoder", cfg.n_blocks, cfg.block_dims(), rng)?,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Strided convolutions with ReLU: `[T, D] → [T_ds, d_model]`.
    pub fn subsample<'t, S: Scalar>(
        &self,
        ctx: &Ctx<'_, 't, S>,
        x: Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        let mut h = x;
        for c in &self.convs {
            h = h
                .conv1d(
                    ctx.p(c.w),
                    ctx.p(c.b),
                    self.cfg.conv_kernel,
                    self.cfg.conv_stride,
                )?
                .relu();
        }
        Ok(h)
    }

    pub fn forward<'t, S: Scalar>(
        &self,
        ctx: &Ctx<'_, 't, S>,
        x: &FeatureSequence<S>,
    ) -> Result<EncoderOutput<'t, S>> {
        check_dim("encode_audio", x.dim(), self.cfg.input_dim)?;
        let input = ctx.tape.constant(x.frames().clone());
        let h = self.subsample(ctx, input)?;
        let (layers, top) = self.stack.forward_all(ctx, h, None)?;
        Ok(EncoderOutput { layers, top })
    }
}

#[derive(Debug, Clone)]
pub struct LabelEncoder {
    cfg: LabelEncoderConfig,
    embedding: ParamId,
    stack: TransformerStack,
}

impl LabelEncoder {
    fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        cfg: &LabelEncoderConfig,
        rng: &mut ChaRng,
    ) -> Result<Self> {
        let head = cfg.d_model / cfg.n_heads;
        let dims = BlockDims {
            attention: AttentionDims {
                d_model: cfg.d_model,
                n_heads: cfg.n_heads,
                d_qk: head,
                d_value: head,
                rel_clip: 64,
            },
            d_ff: cfg.d_ff,
            dropout_p: cfg.dropout_p,
        };
        Ok(Self {
            cfg: cfg.clone(),
            embedding: ps.add_glorot(
                "label_encoder.embedding",
                cfg.vocab_size,
                cfg.d_model,
                rng,
            )?,
            stack: TransformerStack::new(ps, "label_encoder", cfg.n_blocks, dims, rng)?,
        })
    }

    /// `(U+1) × d_model` causal embeddings of `[blank] ++ prefix`; row `u`
    /// sees only the first `u` labels.
    pub fn forward<'t, S: Scalar>(
        &self,
        ctx: &Ctx<'_, 't, S>,
        prefix: &[usize],
    ) -> Result<Var<'t, S>> {
        let mut ids = Vec::with_capacity(prefix.len() + 1);
        ids.push(self.cfg.blank);
        for &id in prefix {
            if id >= self.cfg.vocab_size {
                return Err(Error::OutOfRange {
                    index: id,
                    len: self.cfg.vocab_size,
                });
            }
            ids.push(id);
        }
        let x = ctx.p(self.embedding).embedding_lookup(&ids)?;
        let mask = ctx.tape.constant(causal_mask(ids.len()));
        self.stack.forward(ctx, x, Some(mask))
    }
}

/// Trainable transformer stack applied only to the augmented branch.
#[derive(Debug, Clone)]
pub struct PredictionNetwork {
    stack: TransformerStack,
}

impl PredictionNetwork {
    pub fn forward<'t, S: Scalar>(
        &self,
        ctx: &Ctx<'_, 't, S>,
        aug_top: Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        self.stack.forward(ctx, aug_top, None)
    }
}

/// The full c-siam network: shared audio encoder, label encoder, joint
/// network and prediction network, with their parameters.
#[derive(Debug, Clone)]
pub struct CSiamModel<S> {
    pub cfg: ModelConfig,
    pub params: ParamSet<S>,
    pub audio: AudioEncoder,
    pub labels: LabelEncoder,
    pub predictor: PredictionNetwork,
    pub joint: JointNetwork,
}

impl<S: Scalar> CSiamModel<S> {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaRng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let audio = AudioEncoder::new(&mut ps, &cfg.encoder, &mut rng)?;
        let labels = LabelEncoder::new(&mut ps, &cfg.label_encoder, &mut rng)?;
        let joint = JointNetwork::new(
            &mut ps,
            "joint",
            cfg.encoder.d_model,
            cfg.label_encoder.d_model,
            &cfg.joint,
            cfg.label_encoder.vocab_size,
            &mut rng,
        )?;
        let predictor = PredictionNetwork {
            stack: TransformerStack::new(
                &mut ps,
                "predictor",
                cfg.predictor.n_blocks,
                cfg.encoder.block_dims(),
                &mut rng,
            )?,
        };
        Ok(Self {
            cfg,
            params: ps,
            audio,
            labels,
            predictor,
            joint,
        })
    }

    pub fn encode_audio<'t>(
        &self,
        ctx: &Ctx<'_, 't, S>,
        x: &FeatureSequence<S>,
    ) -> Result<EncoderOutput<'t, S>> {
        self.audio.forward(ctx, x)
    }

    pub fn encode_labels<'t>(&self, ctx: &Ctx<'_, 't, S>, prefix: &[usize]) -> Result<Var<'t, S>> {
        self.labels.forward(ctx, prefix)
    }

    pub fn predict<'t>(&self, ctx: &Ctx<'_, 't, S>, aug_top: Var<'t, S>) -> Result<Var<'t, S>> {
        self.predictor.forward(ctx, aug_top)
    }

    /// Eval-mode activations of every encoder layer, detached from any tape.
    pub fn activations(&self, x: &FeatureSequence<S>) -> Result<EncoderActivations<S>> {
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &self.params, Mode::Eval, ChaRng::seed_from_u64(0));
        let out = self.encode_audio(&ctx, x)?;
        Ok(EncoderActivations {
            layers: out.layers.iter().map(Var::tensor).collect(),
        })
    }

    pub fn blank(&self) -> usize {
        self.cfg.label_encoder.blank
    }

    pub fn vocab_size(&self) -> usize {
        self.cfg.label_encoder.vocab_size
    }

    /// Copy with every tensor converted to another scalar type.
    pub fn cast<T: Scalar>(&self) -> CSiamModel<T> {
        CSiamModel {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            audio: self.audio.clone(),
            labels: self.labels.clone(),
            predictor: self.predictor.clone(),
            joint: self.joint.clone(),
        }
    }
}
