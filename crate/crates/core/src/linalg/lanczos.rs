//! Lanczos iteration with full reorthogonalization for a few extreme
//! eigenpairs of a symmetric operator given only as a matrix-vector product.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::eigen::sym_tridiagonal_eig;
use crate::linalg::matrix::{axpy, dot, norm2};
use crate::linalg::LinalgError;
use crate::scalar::Scalar;

const START_SEED: u64 = 0x1a2c_5eed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LanczosTarget {
    /// Algebraically largest eigenvalues.
    Largest,
    /// Eigenvalues of largest absolute value.
    LargestMagnitude,
}

#[derive(Debug, Clone)]
pub struct RitzPairs<T> {
    /// Ordered by the target criterion, best first.
    pub values: Vec<T>,
    pub vectors: Vec<Vec<T>>,
    /// Number of operator applications used.
    pub iterations: usize,
}

/// Finds `k` extreme eigenpairs of the `n`-dimensional symmetric operator
/// `apply(x, out)`, stopping once every wanted Ritz residual is below
/// `tol·max|θ|`. Deterministic: the start vector comes from a fixed seed.
pub fn lanczos<T: Scalar>(
    n: usize,
    k: usize,
    target: LanczosTarget,
    tol: f64,
    max_iter: usize,
    mut apply: impl FnMut(&[T], &mut [T]),
) -> Result<RitzPairs<T>, LinalgError> {
    if k == 0 || k > n {
        return Err(LinalgError::OutOfRange {
            what: "k",
            value: k,
            max: n,
        });
    }
    let tol = T::c(tol);
    let mut rng = ChaCha8Rng::seed_from_u64(START_SEED);
    let mut basis: Vec<Vec<T>> = Vec::new();
    let mut alphas: Vec<T> = Vec::new();
    // betas[j] couples basis[j] and basis[j+1]
    let mut betas: Vec<T> = Vec::new();

    let mut q: Vec<T> = (0..n).map(|_| T::c(rng.random::<f64>() - 0.5)).collect();
    let nq = norm2(&q);
    q.iter_mut().for_each(|x| *x /= nq);
    let mut w = vec![T::zero(); n];
    let mut next_check = k.max(8).min(n);
    let mut scale = T::zero();

    loop {
        apply(&q, &mut w);
        let m = basis.len();
        if m > 0 {
            axpy(-betas[m - 1], &basis[m - 1], &mut w);
        }
        let alpha = dot(&w, &q);
        axpy(-alpha, &q, &mut w);
        basis.push(q);
        alphas.push(alpha);
        reorthogonalize(&basis, &mut w);
        let beta = norm2(&w);
        scale = scale.max(alpha.abs() + beta);
        let m = basis.len();

        let invariant = beta <= T::epsilon() * T::c(16.0) * scale.max(T::min_positive_value());
        if m == n || invariant || m >= next_check || m >= max_iter {
            let ritz = ritz_pairs(&alphas, &betas, k.min(m), target)?;
            let converged = ritz
                .iter()
                .all(|(theta, last)| (beta * *last).abs() <= tol * theta.abs().max(scale * T::epsilon()));
            if m >= k && (converged || m == n) {
                let values = ritz.iter().map(|(t, _)| *t).collect();
                let vectors = assemble_vectors(&basis, &alphas, &betas, k, target)?;
                return Ok(RitzPairs {
                    values,
                    vectors,
                    iterations: m,
                });
            }
            if m >= max_iter {
                return Err(LinalgError::NoConvergence {
                    method: "lanczos",
                    iterations: m,
                });
            }
            next_check = (m + (m / 4).max(8)).min(n);
        }

        if invariant {
            // Krylov space exhausted early; continue from a fresh direction.
            let mut fresh: Vec<T> = (0..n).map(|_| T::c(rng.random::<f64>() - 0.5)).collect();
            reorthogonalize(&basis, &mut fresh);
            let nf = norm2(&fresh);
            fresh.iter_mut().for_each(|x| *x /= nf);
            betas.push(T::zero());
            q = fresh;
        } else {
            betas.push(beta);
            q = w.iter().map(|&x| x / beta).collect();
        }
    }
}

fn reorthogonalize<T: Scalar>(basis: &[Vec<T>], w: &mut [T]) {
    for _ in 0..2 {
        for b in basis {
            let c = dot(b, w);
            axpy(-c, b, w);
        }
    }
}

fn ordered<T: Scalar>(values: &[T], target: LanczosTarget) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    if target == LanczosTarget::LargestMagnitude {
        idx.sort_by(|&a, &b| {
            values[b]
                .abs()
                .partial_cmp(&values[a].abs())
                .expect("finite Ritz values")
                .then(a.cmp(&b))
        });
    }
    idx
}

/// Wanted Ritz values with the last component of their tridiagonal eigenvector.
fn ritz_pairs<T: Scalar>(
    alphas: &[T],
    betas: &[T],
    k: usize,
    target: LanczosTarget,
) -> Result<Vec<(T, T)>, LinalgError> {
    let m = alphas.len();
    let eig = sym_tridiagonal_eig(alphas, &betas[..m - 1])?;
    Ok(ordered(&eig.eigenvalues, target)
        .into_iter()
        .take(k)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors.get(m - 1, i)))
        .collect())
}

fn assemble_vectors<T: Scalar>(
    basis: &[Vec<T>],
    alphas: &[T],
    betas: &[T],
    k: usize,
    target: LanczosTarget,
) -> Result<Vec<Vec<T>>, LinalgError> {
    let m = alphas.len();
    let n = basis[0].len();
    let eig = sym_tridiagonal_eig(alphas, &betas[..m - 1])?;
    let sign_tol = T::epsilon().sqrt();
    Ok(ordered(&eig.eigenvalues, target)
        .into_iter()
        .take(k)
        .map(|i| {
            let mut v = vec![T::zero(); n];
            for (j, b) in basis.iter().enumerate() {
                axpy(eig.eigenvectors.get(j, i), b, &mut v);
            }
            let nv = norm2(&v);
            let flip = v
                .iter()
                .find(|x| x.abs() > sign_tol)
                .is_some_and(|&x| x < T::zero());
            let s = if flip { -nv } else { nv };
            v.iter_mut().for_each(|x| *x /= s);
            v
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{sym_eig, Matrix};

    fn random_symmetric(n: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        m.symmetrize_inplace();
        m
    }

    #[test]
    fn matches_dense_extremes() {
        let a = random_symmetric(150, 3);
        let full = sym_eig(&a).unwrap();
        let top = lanczos(150, 3, LanczosTarget::Largest, 1e-12, 1000, |x, y| {
            y.copy_from_slice(&a.matvec(x).unwrap())
        })
        .unwrap();
        for i in 0..3 {
            assert!((top.values[i] - full.eigenvalues[i]).abs() < 1e-10);
            let v = full.vector(i);
            let overlap = dot(&v, &top.vectors[i]).abs();
            assert!((overlap - 1.0).abs() < 1e-8, "overlap {overlap}");
        }
        let mag = lanczos(150, 1, LanczosTarget::LargestMagnitude, 1e-12, 1000, |x, y| {
            y.copy_from_slice(&a.matvec(x).unwrap())
        })
        .unwrap();
        let expected = full
            .eigenvalues
            .iter()
            .cloned()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        assert!((mag.values[0] - expected).abs() < 1e-10);
    }

    #[test]
    fn low_rank_operator_breaks_down_cleanly() {
        let u: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let a = Matrix::outer(&u, &u);
        let r = lanczos(40, 2, LanczosTarget::Largest, 1e-12, 100, |x, y| {
            y.copy_from_slice(&a.matvec(x).unwrap())
        })
        .unwrap();
        assert!((r.values[0] - dot(&u, &u)).abs() < 1e-10);
        assert!(r.values[1].abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_k() {
        let r = lanczos::<f64>(3, 4, LanczosTarget::Largest, 1e-12, 10, |x, y| {
            y.copy_from_slice(x)
        });
        assert!(matches!(r, Err(LinalgError::OutOfRange { .. })));
    }
}
