use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Var};
use crate::encoder::{Ctx, Linear};
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointConfig {
    pub d_joint: usize,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self { d_joint: 64 }
    }
}

/// `r = Linear(Tanh(Linear(a) + Linear(l)))` over every (frame, label
/// prefix) pair.
#[derive(Debug, Clone)]
pub struct JointNetwork {
    pub acoustic: Linear,
    pub label: Linear,
    pub output: Linear,
}

impl JointNetwork {
    pub fn new<S: Scalar>(
        ps: &mut ParamSet<S>,
        name: &str,
        d_acoustic: usize,
        d_label: usize,
        cfg: &JointConfig,
        vocab: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            acoustic: Linear::new(
                ps,
                &format!("{name}.acoustic"),
                d_acoustic,
                cfg.d_joint,
                rng,
            )?,
            label: Linear::new(ps, &format!("{name}.label"), d_label, cfg.d_joint, rng)?,
            output: Linear::new(ps, &format!("{name}.output"), cfg.d_joint, vocab, rng)?,
        })
    }

    /// `a: [T, d_a]`, `l: [U+1, d_l]` → logits `[T·(U+1), V]`, row `t·(U+1) + u`.
    pub fn joint_logits<'t, S: Scalar>(
        &self,
        ctx: &Ctx<'_, 't, S>,
        a: Var<'t, S>,
        l: Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        let pa = self.acoustic.forward(ctx, a)?;
        let pl = self.label.forward(ctx, l)?;
        self.output.forward(ctx, pa.outer_add_rows(pl)?.tanh())
    }
}
