//! Contrastive siamese semi-supervised speech recognition at desk scale.
//!
//! A shared relative-attention transformer encoder is trained jointly with
//! an RNN-T objective on labelled utterances and a time-aligned contrastive
//! objective between an augmented branch (tempo change or time warp, span
//! masking, prediction network) and a gradient-stopped clean target branch.

// NaN-rejecting comparisons are written as `!(x > 0.0)` on purpose, and
// tape operations are fallible so they cannot be the std operator traits.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::should_implement_trait,
    clippy::needless_range_loop
)]

pub mod augment;
pub mod autodiff;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod frontend;
pub mod gradsuite;
pub mod losses;
pub mod probe;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Features = frontend::FeatureSequence<f32>;
pub type Features64 = frontend::FeatureSequence<f64>;
pub type Model = encoder::CSiamModel<f32>;
pub type Model64 = encoder::CSiamModel<f64>;
