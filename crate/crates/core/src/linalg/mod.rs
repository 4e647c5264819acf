//! Dense and sparse numeric kernels.
//!
//! Everything here works in `f64`. The dense routines (Cholesky, triangular
//! solves, symmetric eigendecomposition) are sized for the small `k x k`
//! covariance matrices of the attention layers and the few-hundred-point
//! kernel matrices used by the eigenfunction checks. The sparse side is just
//! enough to solve the finite-difference systems of the data generators.

mod dense;
mod eigen;
mod factor;
mod sparse;

pub use dense::DenseMatrix;
pub(crate) use dense::gemm;
pub use eigen::{sym_eig, SymEig, QL_MAX_ITERATIONS};
pub use factor::{
    cholesky, cholesky_jittered, inverse_lower_transpose, solve_triangular, CholeskyFactor,
};
pub use sparse::{conjugate_gradient, CgReport, SparseSystem};

use thiserror::Error;

/// Errors raised by the numeric kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("triangular factor is singular at diagonal entry {0}")]
    SingularFactor(usize),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("invalid sparse system: {0}")]
    InvalidSystem(String),
    #[error("non-finite entry in input")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, LinalgError>;
