//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records primitives as they run. [`Tape::backward`] produces
//! parameter gradients of a scalar root, [`Tape::backward_with_seed`] gives
//! vector-Jacobian products and [`Tape::forward_tangent`] gives exact
//! Jacobian-vector products over the same recording.

mod check;
mod linearize;
mod tape;

pub use check::{check_gradients, check_gradients_sampled, BlockCheck, GradientReport};
pub use linearize::{jvp, vjp, Linearization};
pub use tape::{concat, GradientFault, Gradients, NodeId, OpKind, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("backward needs a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("root variable is not recorded on this tape")]
    DetachedRoot,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("function produced a non-finite value")]
    NonFinite,
}
