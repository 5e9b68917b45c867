use crate::linalg::eigen::sym_eig;
use crate::linalg::matrix::{dot, norm2, Matrix};
use crate::linalg::LinalgError;
use crate::scalar::Scalar;

/// Leading singular triplets; columns of the vector matrices pair with `singular_values`.
#[derive(Debug, Clone)]
pub struct SvdTop<T> {
    pub singular_values: Vec<T>,
    pub left_vectors: Matrix<T>,
    pub right_vectors: Matrix<T>,
}

/// Top-`k` singular triplets from the eigendecomposition of the smaller Gram matrix.
pub fn svd_top<T: Scalar>(a: &Matrix<T>, k: usize) -> Result<SvdTop<T>, LinalgError> {
    let (rows, cols) = a.shape();
    let max = rows.min(cols);
    if k > max {
        return Err(LinalgError::OutOfRange {
            what: "k",
            value: k,
            max,
        });
    }
    let right_side = cols <= rows;
    let mut gram = if right_side {
        a.matmul_tn(a)?
    } else {
        a.matmul_nt(a)?
    };
    gram.symmetrize_inplace();
    let eig = sym_eig(&gram)?;
    let sigma: Vec<T> = eig.eigenvalues[..k]
        .iter()
        .map(|&l| l.max(T::zero()).sqrt())
        .collect();
    let gram_side: Vec<Vec<T>> = (0..k).map(|j| eig.vector(j)).collect();
    let other_len = if right_side { rows } else { cols };
    let mut other: Vec<Vec<T>> = Vec::with_capacity(k);
    let cutoff = sigma.first().copied().unwrap_or(T::zero()) * T::epsilon() * T::c(64.0);
    for (j, g) in gram_side.iter().enumerate() {
        let mut u = if right_side { a.matvec(g)? } else { a.matvec_t(g)? };
        if sigma[j] > cutoff {
            let s = norm2(&u);
            u.iter_mut().for_each(|x| *x /= s);
        } else {
            u = complete_basis(&other, other_len);
        }
        other.push(u);
    }
    let gram_m = Matrix::from_columns(&gram_side)?;
    let other_m = if k == 0 {
        Matrix::zeros(other_len, 0)
    } else {
        Matrix::from_columns(&other)?
    };
    let (left_vectors, right_vectors) = if right_side {
        (other_m, gram_m)
    } else {
        (gram_m, other_m)
    };
    Ok(SvdTop {
        singular_values: sigma,
        left_vectors,
        right_vectors,
    })
}

/// A unit vector orthogonal to `existing`, built from coordinate axes.
fn complete_basis<T: Scalar>(existing: &[Vec<T>], len: usize) -> Vec<T> {
    for axis in 0..len {
        let mut v = vec![T::zero(); len];
        v[axis] = T::one();
        for _ in 0..2 {
            for e in existing {
                let c = dot(e, &v);
                crate::linalg::axpy(-c, e, &mut v);
            }
        }
        let n = norm2(&v);
        if n > T::c(0.5) {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
    vec![T::zero(); len]
}
