//! Symmetric eigendecomposition.
//!
//! Two independent solvers live here: cyclic Jacobi rotations (used for small
//! matrices and as a cross-check) and Householder tridiagonalization followed
//! by implicit QL iterations (used for everything larger). Both produce
//! eigenvalues sorted descending, ties kept in solver order, and eigenvectors
//! normalized so that their first non-negligible component is positive.

use crate::linalg::matrix::{axpy, dot, Matrix};
use crate::linalg::LinalgError;
use crate::scalar::Scalar;

/// Matrices up to this order go through Jacobi; larger ones through QL.
pub const JACOBI_MAX_ORDER: usize = 32;

const JACOBI_MAX_SWEEPS: usize = 100;
const QL_MAX_ITERATIONS: usize = 60;

/// Eigenvalues sorted descending with eigenvectors as matching columns.
#[derive(Debug, Clone)]
pub struct EigenDecomposition<T> {
    pub eigenvalues: Vec<T>,
    pub eigenvectors: Matrix<T>,
}

impl<T: Scalar> EigenDecomposition<T> {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn vector(&self, idx: usize) -> Vec<T> {
        self.eigenvectors.column(idx)
    }

    /// `Q·diag(λ)·Qᵀ`.
    pub fn reconstruct(&self) -> Matrix<T> {
        let q = &self.eigenvectors;
        let scaled = Matrix::from_fn(q.rows(), q.cols(), |i, j| q.get(i, j) * self.eigenvalues[j]);
        scaled
            .matmul_nt(q)
            .expect("eigenvector matrix is square by construction")
    }
}

fn symmetry_tolerance<T: Scalar>() -> T {
    T::c(1e-10).max(T::epsilon() * T::c(64.0))
}

fn validate_symmetric<T: Scalar>(a: &Matrix<T>) -> Result<(), LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFiniteInput);
    }
    let asym = a.relative_asymmetry();
    if asym > symmetry_tolerance() {
        return Err(LinalgError::NotSymmetric {
            relative_asymmetry: asym.to_f64_lossy(),
        });
    }
    Ok(())
}

/// Full decomposition of a symmetric matrix.
pub fn sym_eig<T: Scalar>(a: &Matrix<T>) -> Result<EigenDecomposition<T>, LinalgError> {
    if a.rows() <= JACOBI_MAX_ORDER {
        sym_eig_jacobi(a)
    } else {
        sym_eig_ql(a)
    }
}

/// Eigenvalues only, sorted descending. Much cheaper than [`sym_eig`] for large inputs.
pub fn sym_eigenvalues<T: Scalar>(a: &Matrix<T>) -> Result<Vec<T>, LinalgError> {
    validate_symmetric(a)?;
    if a.rows() <= JACOBI_MAX_ORDER {
        return Ok(sym_eig_jacobi(a)?.eigenvalues);
    }
    let mut work = a.clone();
    let tri = tridiagonalize(&mut work);
    let mut d = tri.diag;
    let mut e = tri.offdiag;
    tridiagonal_ql(&mut d, &mut e, None)?;
    let mut vals = d;
    vals.sort_by(|x, y| y.partial_cmp(x).expect("finite eigenvalues"));
    Ok(vals)
}

/// Cyclic Jacobi; converges when the off-diagonal Frobenius mass drops below
/// `1e-12·‖A‖_F` (or the scalar's epsilon when that is coarser).
pub fn sym_eig_jacobi<T: Scalar>(a: &Matrix<T>) -> Result<EigenDecomposition<T>, LinalgError> {
    validate_symmetric(a)?;
    let n = a.rows();
    let mut m = a.clone();
    m.symmetrize_inplace();
    // Rows of `vt` are the eigenvectors being accumulated.
    let mut vt = Matrix::<T>::identity(n);
    let fro = m.as_slice().iter().map(|&x| x * x).sum::<T>().sqrt();
    let tol = T::c(1e-12).max(T::epsilon() * T::c(4.0)) * fro;

    let off_norm = |m: &Matrix<T>| {
        let mut s = T::zero();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m.get(i, j) * m.get(i, j);
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    while off_norm(&m) > tol {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(LinalgError::NoConvergence {
                method: "jacobi",
                iterations: sweeps,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq == T::zero() {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (T::c(2.0) * apq);
                let t = if theta.abs() > T::c(1e150).min(T::max_value().sqrt()) {
                    T::one() / (T::c(2.0) * theta)
                } else {
                    let mag = T::one() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    if theta < T::zero() {
                        -mag
                    } else {
                        mag
                    }
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                m.set(p, p, app - t * apq);
                m.set(q, q, aqq + t * apq);
                m.set(p, q, T::zero());
                m.set(q, p, T::zero());
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = m.get(r, p);
                    let arq = m.get(r, q);
                    let new_rp = c * arp - s * arq;
                    let new_rq = s * arp + c * arq;
                    m.set(r, p, new_rp);
                    m.set(p, r, new_rp);
                    m.set(r, q, new_rq);
                    m.set(q, r, new_rq);
                }
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
    }
    Ok(finish(m.diagonal(), vt))
}

/// Applies `(row_p, row_q) ← (c·row_p − s·row_q, s·row_p + c·row_q)`.
fn rotate_rows<T: Scalar>(vt: &mut Matrix<T>, p: usize, q: usize, c: T, s: T) {
    debug_assert!(p < q);
    let n = vt.cols();
    let data = vt.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * n);
    let rp = &mut head[p * n..(p + 1) * n];
    let rq = &mut tail[..n];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Householder tridiagonalization followed by implicit QL.
pub fn sym_eig_ql<T: Scalar>(a: &Matrix<T>) -> Result<EigenDecomposition<T>, LinalgError> {
    validate_symmetric(a)?;
    let n = a.rows();
    let mut work = a.clone();
    work.symmetrize_inplace();
    let tri = tridiagonalize(&mut work);
    let mut d = tri.diag.clone();
    let mut e = tri.offdiag.clone();
    let mut zt = Matrix::<T>::identity(n);
    tridiagonal_ql(&mut d, &mut e, Some(&mut zt))?;
    for i in 0..n {
        tri.apply_q(&work, zt.row_mut(i));
    }
    Ok(finish(d, zt))
}

/// Sorts descending (stable on ties), fixes signs and transposes the row
/// eigenvectors into columns.
fn finish<T: Scalar>(values: Vec<T>, vt: Matrix<T>) -> EigenDecomposition<T> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        values[j]
            .partial_cmp(&values[i])
            .expect("finite eigenvalues")
            .then(i.cmp(&j))
    });
    let sign_tol = T::epsilon().sqrt();
    let mut vectors = Matrix::zeros(n, n);
    let mut sorted = Vec::with_capacity(n);
    for (col, &src) in order.iter().enumerate() {
        sorted.push(values[src]);
        let v = vt.row(src);
        let flip = v
            .iter()
            .find(|x| x.abs() > sign_tol)
            .is_some_and(|&x| x < T::zero());
        for (i, &x) in v.iter().enumerate() {
            vectors.set(i, col, if flip { -x } else { x });
        }
    }
    EigenDecomposition {
        eigenvalues: sorted,
        eigenvectors: vectors,
    }
}

/// Reflectors `H_k = I − β_k v_k v_kᵀ` plus the resulting tridiagonal.
/// `v_k` lives in row `k`, columns `k+1..n`, of the work matrix.
pub(crate) struct Tridiagonal<T> {
    pub diag: Vec<T>,
    /// `offdiag[i] = T[i, i+1]`; the last entry is zero.
    pub offdiag: Vec<T>,
    betas: Vec<T>,
}

impl<T: Scalar> Tridiagonal<T> {
    /// `z ← Q·z` with `Q = H_0 H_1 ⋯ H_{n−3}`.
    fn apply_q(&self, work: &Matrix<T>, z: &mut [T]) {
        let n = z.len();
        for k in (0..self.betas.len()).rev() {
            let beta = self.betas[k];
            if beta == T::zero() {
                continue;
            }
            let v = &work.row(k)[k + 1..n];
            let s = beta * dot(v, &z[k + 1..n]);
            axpy(-s, v, &mut z[k + 1..n]);
        }
    }
}

/// Reduces a symmetric matrix (full storage, overwritten) to tridiagonal form.
pub(crate) fn tridiagonalize<T: Scalar>(a: &mut Matrix<T>) -> Tridiagonal<T> {
    let n = a.rows();
    let mut diag = vec![T::zero(); n];
    let mut offdiag = vec![T::zero(); n];
    let mut betas = Vec::with_capacity(n.saturating_sub(2));
    let mut p = vec![T::zero(); n];

    for k in 0..n.saturating_sub(2) {
        diag[k] = a.get(k, k);
        let m = n - k - 1;
        let x: Vec<T> = a.row(k)[k + 1..].to_vec();
        let tail_sq: T = x[1..].iter().map(|&t| t * t).sum();
        if tail_sq == T::zero() {
            offdiag[k] = x[0];
            betas.push(T::zero());
            continue;
        }
        let norm = (x[0] * x[0] + tail_sq).sqrt();
        let alpha = if x[0] >= T::zero() { -norm } else { norm };
        let mut v = x;
        v[0] -= alpha;
        let vtv = dot(&v, &v);
        let beta = T::c(2.0) / vtv;
        offdiag[k] = alpha;

        // p = β·A22·v
        for i in 0..m {
            let row = &a.row(k + 1 + i)[k + 1..];
            p[i] = beta * dot(row, &v);
        }
        let kappa = T::c(0.5) * beta * dot(&p[..m], &v);
        for i in 0..m {
            p[i] -= kappa * v[i];
        }
        // A22 −= v wᵀ + w vᵀ with w = p − κ v
        for i in 0..m {
            let vi = v[i];
            let wi = p[i];
            let row = &mut a.row_mut(k + 1 + i)[k + 1..];
            for j in 0..m {
                row[j] -= vi * p[j] + wi * v[j];
            }
        }
        a.row_mut(k)[k + 1..].copy_from_slice(&v);
        betas.push(beta);
    }
    if n >= 2 {
        diag[n - 2] = a.get(n - 2, n - 2);
        offdiag[n - 2] = a.get(n - 2, n - 1);
    }
    if n >= 1 {
        diag[n - 1] = a.get(n - 1, n - 1);
    }
    Tridiagonal {
        diag,
        offdiag,
        betas,
    }
}

/// Implicit QL on a symmetric tridiagonal matrix (diagonal `d`, super-diagonal
/// `e` with `e[n−1] = 0`). On return `d` holds the eigenvalues, unsorted.
/// When `zt` is supplied its rows are rotated along, so starting from the
/// identity they end up as the eigenvectors.
pub fn tridiagonal_ql<T: Scalar>(
    d: &mut [T],
    e: &mut [T],
    mut zt: Option<&mut Matrix<T>>,
) -> Result<(), LinalgError> {
    let n = d.len();
    assert_eq!(e.len(), n, "off-diagonal must be padded to length n");
    if n == 0 {
        return Ok(());
    }
    e[n - 1] = T::zero();
    let eps = T::epsilon();
    let mut f = T::zero();
    let mut tst1 = T::zero();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > QL_MAX_ITERATIONS {
                    return Err(LinalgError::NoConvergence {
                        method: "tridiagonal QL",
                        iterations: iter,
                    });
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (T::c(2.0) * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let gi = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * gi;
                    d[i + 1] = h + s * (c * gi + s * d[i]);
                    if let Some(z) = zt.as_deref_mut() {
                        // (row_i, row_{i+1}) ← (c·row_i − s·row_{i+1}, s·row_i + c·row_{i+1})
                        rotate_rows(z, i, i + 1, c, s);
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
    Ok(())
}

/// Eigen-decomposition of a symmetric tridiagonal matrix given by its diagonal
/// and off-diagonal (length `n − 1`), sorted descending.
pub fn sym_tridiagonal_eig<T: Scalar>(
    diag: &[T],
    offdiag: &[T],
) -> Result<EigenDecomposition<T>, LinalgError> {
    let n = diag.len();
    if offdiag.len() + 1 != n.max(1) {
        return Err(LinalgError::InvalidData {
            expected: n.saturating_sub(1),
            got: offdiag.len(),
        });
    }
    let mut d = diag.to_vec();
    let mut e = offdiag.to_vec();
    e.push(T::zero());
    e.truncate(n);
    let mut zt = Matrix::identity(n);
    tridiagonal_ql(&mut d, &mut e, Some(&mut zt))?;
    Ok(finish(d, zt))
}
