//! Training objectives: the transducer loss over the joint network's logit
//! lattice, the time-aligned contrastive loss between branches, and their
//! weighted sum.

mod contrastive;
mod joint;
mod rnnt;

pub use contrastive::{
    contrastive_loss, contrastive_loss_pairs, masked_anchors, retrieval_accuracy, sample_pairs,
    ContrastiveBatch, ContrastiveConfig, ContrastivePairs,
};
pub use joint::{JointConfig, JointNetwork};
pub use rnnt::{rnnt_loss, RnntLattice};

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_unsup: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_unsup: 1.0 }
    }
}

/// `rnnt + lambda_unsup · contrastive`
pub fn total_loss<'t, S: Scalar>(
    rnnt: Var<'t, S>,
    contrastive: Var<'t, S>,
    weights: &LossWeights,
) -> Result<Var<'t, S>> {
    if !(weights.lambda_unsup >= 0.0) {
        return Err(Error::Config("lambda_unsup must be ≥ 0".into()));
    }
    rnnt.add(contrastive.scale(S::of(weights.lambda_unsup)))
}
