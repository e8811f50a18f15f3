//! Sparse and dense linear algebra kernels.

pub mod dense;
pub mod dense_sym;
pub mod ldl;
pub mod lu;
pub mod ordering;
pub mod sparse;

pub use dense::{axpy, dot, norm1, norm2, norm_inf, DenseMatrix};
pub use dense_sym::{BunchKaufman, Cholesky, DenseSymFactor};
pub use ldl::{LdlFactor, LdlOptions, LdlSymbolic};
pub use lu::{BlockLu, LuFactor, LuPhase};
pub use sparse::SparseMatrix;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("block {block} is singular")]
    SingularBlock { block: usize },
    #[error("matrix is singular at pivot {pivot}")]
    Singular { pivot: usize },
    #[error("zero pivot at index {index}")]
    ZeroPivot { index: usize },
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix contains non-finite values")]
    NonFinite,
}

/// Counts of positive, negative and zero eigenvalues.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

impl Inertia {
    pub(crate) fn add_pivot(&mut self, d: f64, scale: f64) {
        if d.abs() <= 1e-14 * scale {
            self.zero += 1;
        } else if d > 0.0 {
            self.positive += 1;
        } else {
            self.negative += 1;
        }
    }
}
