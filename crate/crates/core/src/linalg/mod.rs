//! Dense real linear algebra: the matrix type, symmetric eigensolvers, norms,
//! a truncated SVD and a pseudo-inverse solver for PSD systems.

mod eigen;
mod lanczos;
mod matrix;
mod norms;
mod solve;
mod svd;

pub use eigen::{
    sym_eig, sym_eig_jacobi, sym_eig_ql, sym_eigenvalues, sym_tridiagonal_eig, tridiagonal_ql,
    EigenDecomposition, JACOBI_MAX_ORDER,
};
pub use lanczos::{lanczos, LanczosTarget, RitzPairs};
pub use matrix::{axpy, dot, gemm, norm2, Matrix};
pub use norms::{frobenius_norm, operator_norm, sym_operator_norm, two_inf_norm};
pub use solve::{solve_psd, PsdSolver};
pub use svd::{svd_top, SvdTop};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("expected {expected} entries, got {got}")]
    InvalidData { expected: usize, got: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("input contains non-finite entries")]
    NonFiniteInput,
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (relative asymmetry {relative_asymmetry:e})")]
    NotSymmetric { relative_asymmetry: f64 },
    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e} below -{threshold:e})")]
    NotPsd { eigenvalue: f64, threshold: f64 },
    #[error("{what} = {value} out of range (max {max})")]
    OutOfRange {
        what: &'static str,
        value: usize,
        max: usize,
    },
    #[error("empty input")]
    Empty,
    #[error("{method} did not converge after {iterations} iterations")]
    NoConvergence {
        method: &'static str,
        iterations: usize,
    },
}
