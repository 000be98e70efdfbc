//! Reverse-mode automatic differentiation over dense tensors.

pub mod gradcheck;
mod ops;
pub mod params;
pub mod tape;

pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use params::{ParamId, ParamKind, ParamSet, Parameter};
pub use tape::{GradSink, Gradients, Pullback, Tape, Var};

pub(crate) use ops::log_sum_exp;
