use crate::linalg::eigen::{sym_eig, EigenDecomposition};
use crate::linalg::matrix::{axpy, dot, Matrix};
use crate::linalg::LinalgError;
use crate::scalar::Scalar;

/// Spectral pseudo-inverse of a PSD matrix, reusable across right-hand sides.
#[derive(Debug, Clone)]
pub struct PsdSolver<T> {
    eig: EigenDecomposition<T>,
    /// Eigenvalues at or below this are treated as zero.
    cutoff: T,
    /// Columns of the eigenvector matrix, stored contiguously.
    vectors: Vec<Vec<T>>,
}

impl<T: Scalar> PsdSolver<T> {
    /// Decomposes `a`. Fails when an eigenvalue lies below `−tol·λ_max`.
    pub fn new(a: &Matrix<T>, tol: T) -> Result<Self, LinalgError> {
        let mut sym = a.clone();
        sym.symmetrize_inplace();
        let eig = sym_eig(&sym)?;
        Self::from_decomposition(eig, tol)
    }

    pub fn from_decomposition(eig: EigenDecomposition<T>, tol: T) -> Result<Self, LinalgError> {
        let lmax = eig.eigenvalues.first().copied().unwrap_or(T::zero()).max(T::zero());
        let cutoff = tol * lmax;
        if let Some(&lmin) = eig.eigenvalues.last() {
            if lmin < -cutoff && lmin < T::zero() {
                return Err(LinalgError::NotPsd {
                    eigenvalue: lmin.to_f64_lossy(),
                    threshold: cutoff.to_f64_lossy(),
                });
            }
        }
        let vectors = (0..eig.len()).map(|j| eig.vector(j)).collect();
        Ok(Self {
            eig,
            cutoff,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.eig.len()
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.eig.eigenvalues
    }

    pub fn decomposition(&self) -> &EigenDecomposition<T> {
        &self.eig
    }

    /// Number of eigen-directions kept by the pseudo-inverse.
    pub fn rank(&self) -> usize {
        self.eig
            .eigenvalues
            .iter()
            .filter(|&&l| l > self.cutoff && l > T::zero())
            .count()
    }

    fn check_len(&self, b: &[T]) -> Result<(), LinalgError> {
        if b.len() != self.dim() {
            return Err(LinalgError::DimensionMismatch {
                expected: (self.dim(), 1),
                got: (b.len(), 1),
            });
        }
        Ok(())
    }

    fn spectral_apply(&self, b: &[T], f: impl Fn(T) -> Option<T>) -> Vec<T> {
        let mut x = vec![T::zero(); b.len()];
        for (q, &l) in self.vectors.iter().zip(&self.eig.eigenvalues) {
            if let Some(w) = f(l) {
                axpy(w * dot(q, b), q, &mut x);
            }
        }
        x
    }

    /// Minimum-norm least-squares solution.
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>, LinalgError> {
        self.check_len(b)?;
        let cutoff = self.cutoff;
        Ok(self.spectral_apply(b, |l| {
            (l > cutoff && l > T::zero()).then(|| T::one() / l)
        }))
    }

    /// `(A + ridge·I)⁻¹ b` restricted to the retained eigenspace.
    pub fn solve_ridge(&self, b: &[T], ridge: T) -> Result<Vec<T>, LinalgError> {
        self.check_len(b)?;
        let cutoff = self.cutoff;
        Ok(self.spectral_apply(b, |l| {
            (l > cutoff && l > T::zero()).then(|| T::one() / (l + ridge))
        }))
    }

    /// Orthogonal projection of `b` onto the retained eigenspace.
    pub fn project(&self, b: &[T]) -> Result<Vec<T>, LinalgError> {
        self.check_len(b)?;
        let cutoff = self.cutoff;
        Ok(self.spectral_apply(b, |l| (l > cutoff && l > T::zero()).then(T::one)))
    }
}

/// One-shot pseudo-solve of `A x = b` for PSD `A`.
pub fn solve_psd<T: Scalar>(a: &Matrix<T>, b: &[T], tol: T) -> Result<Vec<T>, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if b.len() != a.rows() {
        return Err(LinalgError::DimensionMismatch {
            expected: (a.rows(), 1),
            got: (b.len(), 1),
        });
    }
    PsdSolver::new(a, tol)?.solve(b)
}
