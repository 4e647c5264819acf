//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! A [`Tape`] records every primitive applied to its [`Var`] handles; calling
//! [`Tape::backward`] on a scalar result walks the records in reverse and
//! returns the gradient of every leaf that asked for one. The primitive set is
//! what the operator model needs and no more: matrix products, broadcasting
//! arithmetic, pointwise activations, layer normalization, reductions,
//! concatenation and slicing, plus a differentiable Cholesky factor and the
//! matching whitening solve.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{central_difference_error, grad_check, grad_check_many};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_MIN_VARIANCE};
pub use tensor::Tensor;

use crate::linalg::LinalgError;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalarLoss(Vec<usize>),
    #[error("tape already consumed by a previous backward pass")]
    TapeReused,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
