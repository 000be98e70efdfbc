//! Building blocks shared by the audio encoder, label encoder and
//! prediction network.

use std::cell::RefCell;

use rand::Rng;

use crate::autodiff::{ParamId, ParamKind, ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng as ChaRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Everything a forward pass needs: the tape, the parameter values bound to
/// it, the mode, and the dropout generator.
pub struct Ctx<'a, 't, S> {
    pub tape: &'t Tape<S>,
    pub params: &'a ParamSet<S>,
    pub mode: Mode,
    rng: RefCell<ChaRng>,
}

impl<'a, 't, S: Scalar> Ctx<'a, 't, S> {
    pub fn new(tape: &'t Tape<S>, params: &'a ParamSet<S>, mode: Mode, rng: ChaRng) -> Self {
        Self {
            tape,
            params,
            mode,
            rng: RefCell::new(rng),
        }
    }

    pub fn p(&self, id: ParamId) -> Var<'t, S> {
        self.tape.param(self.params, id)
    }

    pub fn dropout(&self, x: Var<'t, S>, p: f64) -> Var<'t, S> {
        match self.mode {
            Mode::Train if p > 0.0 => x.dropout(p, &mut *self.rng.borrow_mut()),
            _ => x,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            w: ps.add_glorot(format!("{name}.w"), d_in, d_out, rng)?,
            b: ps.add(
                format!("{name}.b"),
                Tensor::zeros(&[d_out]),
                ParamKind::Bias,
            )?,
        })
    }

    pub fn forward<'t, S: Scalar>(
        &self,
        ctx: &Ctx<'_, 't, S>,
        x: Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        x.matmul(ctx.p(self.w))?.add_row(ctx.p(self.b))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<S: Scalar>(ps: &mut ParamSet<S>, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gain: ps.add(
                format!("{name}.gain"),
                Tensor::full(&[d], S::one()),
                ParamKind::Norm,
            )?,
            bias: ps.add(format!("{name}.bias"), Tensor::zeros(&[d]), ParamKind::Norm)?,
        })
    }

    pub fn forward<'t, S: Scalar>(
        &self,
        ctx: &Ctx<'_, 't, S>,
        x: Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        x.layer_norm(ctx.p(self.gain), ctx.p(self.bias), S::of(Self::EPS))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionDims {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_qk: usize,
    pub d_value: usize,
    /// Relative distances are clipped to `±rel_clip`.
    pub rel_clip: usize,
}

/// Multi-head self-attention with a learned per-head bias over clipped
/// relative distances `j − i`. There is no absolute position signal.
#[derive(Debug, Clone)]
pub struct RelativeAttention {
    pub dims: AttentionDims,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub out: Linear,
    pub rel_bias: ParamId,
}

impl RelativeAttention {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        name: &str,
        dims: AttentionDims,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let AttentionDims {
            d_model,
            n_heads,
            d_qk,
            d_value,
            rel_clip,
        } = dims;
        Ok(Self {
            dims,
            wq: ps.add_glorot(format!("{name}.wq"), d_model, n_heads * d_qk, rng)?,
            wk: ps.add_glorot(format!("{name}.wk"), d_model, n_heads * d_qk, rng)?,
            wv: ps.add_glorot(format!("{name}.wv"), d_model, n_heads * d_value, rng)?,
            out: Linear::new(ps, &format!("{name}.out"), n_heads * d_value, d_model, rng)?,
            rel_bias: ps.add(
                format!("{name}.rel_bias"),
                Tensor::zeros(&[n_heads, 2 * rel_clip + 1]),
                ParamKind::Bias,
            )?,
        })
    }

    fn bias_index(&self, t: usize, head: usize) -> Vec<usize> {
        let c = self.dims.rel_clip as isize;
        let width = 2 * self.dims.rel_clip + 1;
        let mut idx = Vec::with_capacity(t * t);
        for i in 0..t as isize {
            for j in 0..t as isize {
                idx.push(head * width + ((j - i).clamp(-c, c) + c) as usize);
            }
        }
        idx
    }

    /// Returns the output and, per head, the attention probabilities.
    /// `mask` is an additive `[T, T]` constant (0 or a large negative).
    pub fn forward_with_probs<'t, S: Scalar>(
        &self,
        ctx: &Ctx<'_, 't, S>,
        x: Var<'t, S>,
        mask: Option<Var<'t, S>>,
    ) -> Result<(Var<'t, S>, Vec<Var<'t, S>>)> {
        let t = x.shape()[0];
        let AttentionDims {
            n_heads,
            d_qk,
            d_value,
            ..
        } = self.dims;
        let q = x.matmul(ctx.p(self.wq))?;
        let k = x.matmul(ctx.p(self.wk))?;
        let v = x.matmul(ctx.p(self.wv))?;
        let bias = ctx.p(self.rel_bias);
        let scale = S::of(1.0 / (d_qk as f64).sqrt());
        let mut heads = Vec::with_capacity(n_heads);
        let mut probs = Vec::with_capacity(n_heads);
        for h in 0..n_heads {
            let qh = q.slice_cols(h * d_qk, (h + 1) * d_qk)?;
            let kh = k.slice_cols(h * d_qk, (h + 1) * d_qk)?;
            let vh = v.slice_cols(h * d_value, (h + 1) * d_value)?;
            let mut scores = qh
                .matmul(kh.transpose()?)?
                .scale(scale)
                .add(bias.gather_flat(&self.bias_index(t, h), &[t, t])?)?;
            if let Some(m) = mask {
                scores = scores.add(m)?;
            }
            let p = scores.softmax();
            heads.push(p.matmul(vh)?);
            probs.push(p);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            Var::concat_cols(&heads)?
        };
        Ok((self.out.forward(ctx, cat)?, probs))
    }

    pub fn forward<'t, S: Scalar>(
        &self,
        ctx: &Ctx<'_, 't, S>,
        x: Var<'t, S>,
        mask: Option<Var<'t, S>>,
    ) -> Result<Var<'t, S>> {
        Ok(self.forward_with_probs(ctx, x, mask)?.0)
    }
}

/// Additive mask value for disallowed attention pairs.
pub(crate) const MASKED_SCORE: f64 = -1e9;

/// `[T, T]` additive mask forbidding attention to later positions.
pub fn causal_mask<S: Scalar>(t: usize) -> Tensor<S> {
    Tensor::from_fn(&[t, t], |k| {
        if k % t > k / t {
            S::of(MASKED_SCORE)
        } else {
            S::zero()
        }
    })
}

/// `[T, T]` additive mask forbidding attention to positions where
/// `valid[j]` is false.
pub fn key_padding_mask<S: Scalar>(valid: &[bool]) -> Tensor<S> {
    let t = valid.len();
    Tensor::from_fn(&[t, t], |k| {
        if valid[k % t] {
            S::zero()
        } else {
            S::of(MASKED_SCORE)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockDims {
    pub attention: AttentionDims,
    pub d_ff: usize,
    pub dropout_p: f64,
}

/// Pre-layer-norm transformer block.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln_attn: LayerNorm,
    pub attn: RelativeAttention,
    pub ln_ff: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub dropout_p: f64,
}

impl TransformerBlock {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        name: &str,
        dims: BlockDims,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = dims.attention.d_model;
        Ok(Self {
            ln_attn: LayerNorm::new(ps, &format!("{name}.ln_attn"), d)?,
            attn: RelativeAttention::new(ps, &format!("{name}.attn"), dims.attention, rng)?,
            ln_ff: LayerNorm::new(ps, &format!("{name}.ln_ff"), d)?,
            ff_in: Linear::new(ps, &format!("{name}.ff_in"), d, dims.d_ff, rng)?,
            ff_out: Linear::new(ps, &format!("{name}.ff_out"), dims.d_ff, d, rng)?,
            dropout_p: dims.dropout_p,
        })
    }

    pub fn forward<'t, S: Scalar>(
        &self,
        ctx: &Ctx<'_, 't, S>,
        x: Var<'t, S>,
        mask: Option<Var<'t, S>>,
    ) -> Result<Var<'t, S>> {
        let a = self
            .attn
            .forward(ctx, self.ln_attn.forward(ctx, x)?, mask)?;
        let x = x.add(ctx.dropout(a, self.dropout_p))?;
        let h = self.ff_in.forward(ctx, self.ln_ff.forward(ctx, x)?)?.gelu();
        let f = self.ff_out.forward(ctx, h)?;
        x.add(ctx.dropout(f, self.dropout_p))
    }
}

/// A stack of blocks followed by a final layer norm.
#[derive(Debug, Clone)]
pub struct TransformerStack {
    pub blocks: Vec<TransformerBlock>,
    pub final_norm: LayerNorm,
}

impl TransformerStack {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        name: &str,
        n_blocks: usize,
        dims: BlockDims,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let blocks = (0..n_blocks)
            .map(|i| TransformerBlock::new(ps, &format!("{name}.block{i}"), dims, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            blocks,
            final_norm: LayerNorm::new(ps, &format!("{name}.final_norm"), dims.attention.d_model)?,
        })
    }

    /// Returns every intermediate (input first, then each block output) and
    /// the normalised top.
    pub fn forward_all<'t, S: Scalar>(
        &self,
        ctx: &Ctx<'_, 't, S>,
        x: Var<'t, S>,
        mask: Option<Var<'t, S>>,
    ) -> Result<(Vec<Var<'t, S>>, Var<'t, S>)> {
        let mut layers = Vec::with_capacity(self.blocks.len() + 1);
        layers.push(x);
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(ctx, h, mask)?;
            layers.push(h);
        }
        Ok((layers, self.final_norm.forward(ctx, h)?))
    }

    pub fn forward<'t, S: Scalar>(
        &self,
        ctx: &Ctx<'_, 't, S>,
        x: Var<'t, S>,
        mask: Option<Var<'t, S>>,
    ) -> Result<Var<'t, S>> {
        Ok(self.forward_all(ctx, x, mask)?.1)
    }
}

pub(crate) fn check_dim(op: &'static str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::ShapeMismatch {
            op,
            left: vec![got],
            right: vec![want],
        });
    }
    Ok(())
}
