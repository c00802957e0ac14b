//! Minimal reverse-mode automatic differentiation over `f64` tensors.
//!
//! The op set is the one the convolutional autoencoders need: strided 1-D
//! convolution and its transpose, dense layers, tanh, batch normalisation,
//! dropout, an L2 penalty, the reparameterisation step and the loss terms.
//! Parameters live in a [`ParamStore`]; a [`Tape`] records one forward pass
//! and produces gradients for the parameters it touched.

mod adam;
mod gradcheck;
pub(crate) mod kernels;
mod network;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use adam::{adam_step, Adam, AdamState};
pub use gradcheck::{gradient_check, gradient_check_network, relative_error, GradCheckConfig, GradCheckReport, ParamCheck};
pub use network::{LayerSpec, Network};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{BatchStats, Mode, Tape, UnaryFn, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {layer}: expected {expected:?}, got {got:?}")]
    Shape { layer: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("backward requires a forward pass recorded in training mode")]
    NoRecordedForward,
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
}
