//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Backward passes are recorded as ordinary graph operations, so gradients
//! can be differentiated again. Convolutions are lowered to `im2col` + GEMM.

pub mod codec;
pub mod gradcheck;
pub mod nn;
pub mod tensor;
pub mod var;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use nn::{adam_update, AdamConfig, AdamState, Conv2d, ConvTranspose2d, Linear, ParamId, ParamSet};
pub use tensor::{ConvGeom, Tensor};
pub use var::{grad, Var};

#[derive(Debug, thiserror::Error)]
pub enum AutogradError {
    #[error("non-finite gradient in parameter tensor {0}")]
    NonFiniteGradient(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("cannot decode tensor blob: {0}")]
    Decode(String),
}
