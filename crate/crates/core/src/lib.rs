//! Rewrites transformers whose MLP sublayers use SiLU-family activations into
//! attention-only transformers, and checks the rewrites numerically.
//!
//! Every numeric type is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! below fix `f64`, which is what the CLI, the model file format and the
//! verification tolerances use.

// `!(x > 0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activations;
pub mod analysis;
pub mod cli;
pub mod constructions;
pub mod error;
pub mod matrix;
pub mod model_io;
pub mod nn;
pub mod sampling;
pub mod scalar;

pub use activations::{Activation, GeneralizedSilu, ReferenceActivation};
pub use error::{Error, Result};
pub use matrix::{MaskMatrix, Matrix};
pub use nn::{AttentionHead, FactoredHead, LayerNormConfig, Mlp, MlpActivation, Sublayer, TransformerSpec};
pub use scalar::Scalar;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Head64 = AttentionHead<f64>;
pub type Head32 = AttentionHead<f32>;
pub type Mlp64 = Mlp<f64>;
pub type Transformer64 = TransformerSpec<f64>;
pub type Transformer32 = TransformerSpec<f32>;
