use crate::linalg::lanczos::{lanczos, LanczosTarget};
use crate::linalg::matrix::{norm2, Matrix};
use crate::linalg::LinalgError;
use crate::scalar::Scalar;

const NORM_TOL: f64 = 1e-12;
const NORM_MAX_ITER: usize = 10_000;

pub fn frobenius_norm<T: Scalar>(a: &Matrix<T>) -> T {
    norm2(a.as_slice())
}

/// Largest row ℓ2-norm.
pub fn two_inf_norm<T: Scalar>(a: &Matrix<T>) -> T {
    (0..a.rows())
        .map(|i| norm2(a.row(i)))
        .fold(T::zero(), T::max)
}

/// Largest singular value, from Krylov iteration on the smaller Gram operator.
pub fn operator_norm<T: Scalar>(a: &Matrix<T>) -> Result<T, LinalgError> {
    if a.is_empty() {
        return Err(LinalgError::Empty);
    }
    let (rows, cols) = a.shape();
    let mut tmp = vec![T::zero(); rows.max(cols)];
    let ritz = if cols <= rows {
        lanczos(cols, 1, LanczosTarget::Largest, NORM_TOL, NORM_MAX_ITER, |x, y| {
            gram_apply(a, false, x, &mut tmp[..rows], y)
        })?
    } else {
        lanczos(rows, 1, LanczosTarget::Largest, NORM_TOL, NORM_MAX_ITER, |x, y| {
            gram_apply(a, true, x, &mut tmp[..cols], y)
        })?
    };
    Ok(ritz.values[0].max(T::zero()).sqrt())
}

/// Spectral norm of a symmetric matrix, `max |λ|`.
pub fn sym_operator_norm<T: Scalar>(a: &Matrix<T>) -> Result<T, LinalgError> {
    if a.is_empty() {
        return Err(LinalgError::Empty);
    }
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let ritz = lanczos(
        a.rows(),
        1,
        LanczosTarget::LargestMagnitude,
        NORM_TOL,
        NORM_MAX_ITER,
        |x, y| matvec_into(a, x, y),
    )?;
    Ok(ritz.values[0].abs())
}

fn matvec_into<T: Scalar>(a: &Matrix<T>, x: &[T], y: &mut [T]) {
    for (i, yi) in y.iter_mut().enumerate() {
        *yi = crate::linalg::dot(a.row(i), x);
    }
}

fn matvec_t_into<T: Scalar>(a: &Matrix<T>, x: &[T], y: &mut [T]) {
    y.iter_mut().for_each(|v| *v = T::zero());
    for (i, &xi) in x.iter().enumerate() {
        crate::linalg::axpy(xi, a.row(i), y);
    }
}

/// `y = AᵀA x`, or `y = AAᵀ x` when `outer`.
fn gram_apply<T: Scalar>(a: &Matrix<T>, outer: bool, x: &[T], tmp: &mut [T], y: &mut [T]) {
    if outer {
        matvec_t_into(a, x, tmp);
        matvec_into(a, tmp, y);
    } else {
        matvec_into(a, x, tmp);
        matvec_t_into(a, tmp, y);
    }
}
