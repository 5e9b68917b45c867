//! Empirical conjugate and neural tangent kernels of the two-layer model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{Forward, ModelState};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Ck,
    Ntk,
    NtkFirstLayer,
}

#[derive(Debug, Clone)]
pub struct KernelMatrix<T> {
    pub k: Matrix<T>,
    pub kind: KernelKind,
}

/// `XᵀX/d` for a fixed input matrix, reused across training snapshots.
#[derive(Debug, Clone)]
pub struct InputGram<T> {
    pub gram: Matrix<T>,
}

impl<T: Scalar> InputGram<T> {
    pub fn new(x: &Matrix<T>) -> Result<Self> {
        let mut gram = x.matmul_tn(x)?;
        gram.scale_inplace(T::one() / T::from_usize_lossy(x.rows()));
        gram.symmetrize_inplace();
        Ok(Self { gram })
    }
}

fn scaled_gram<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, h: usize) -> Result<Matrix<T>> {
    let mut g = a.matmul_tn(b)?;
    g.scale_inplace(T::one() / T::from_usize_lossy(h));
    Ok(g)
}

/// `K^CK = σ(WX/√d)ᵀσ(WX/√d)/h`.
pub fn ck_from_cache<T: Scalar>(fwd: &Forward<T>) -> Result<KernelMatrix<T>> {
    let mut k = scaled_gram(&fwd.a, &fwd.a, fwd.a.rows())?;
    k.symmetrize_inplace();
    Ok(KernelMatrix {
        k,
        kind: KernelKind::Ck,
    })
}

pub fn ck_matrix<T: Scalar>(model: &ModelState<T>, x: &Matrix<T>) -> Result<KernelMatrix<T>> {
    ck_from_cache(&model.forward_cache(x)?)
}

/// First-layer part `(XᵀX/d) ⊙ (σ'ᵀ diag(v)² σ'/h)`.
fn ntk_first_layer<T: Scalar>(
    model: &ModelState<T>,
    s_left: &Matrix<T>,
    s_right: &Matrix<T>,
    input_gram: &Matrix<T>,
) -> Result<Matrix<T>> {
    let left = s_left.scale_rows(&model.v)?;
    let mut g = if std::ptr::eq(s_left, s_right) {
        scaled_gram(&left, &left, model.h())?
    } else {
        scaled_gram(&left, &s_right.scale_rows(&model.v)?, model.h())?
    };
    if g.shape() != input_gram.shape() {
        return Err(Error::Dimension {
            context: "input gram",
            expected: g.rows() * g.cols(),
            got: input_gram.rows() * input_gram.cols(),
        });
    }
    for (gi, &xi) in g.as_mut_slice().iter_mut().zip(input_gram.as_slice()) {
        *gi *= xi;
    }
    Ok(g)
}

pub fn ntk_from_cache<T: Scalar>(
    model: &ModelState<T>,
    fwd: &Forward<T>,
    input_gram: &InputGram<T>,
    kind: KernelKind,
) -> Result<KernelMatrix<T>> {
    let mut k = ntk_first_layer(model, &fwd.s, &fwd.s, &input_gram.gram)?;
    match kind {
        KernelKind::Ntk => k.axpy_inplace(T::one(), &scaled_gram(&fwd.a, &fwd.a, model.h())?)?,
        KernelKind::NtkFirstLayer => {}
        KernelKind::Ck => {
            return Err(Error::InvalidParameter("ntk kernel kind required".into()));
        }
    }
    k.symmetrize_inplace();
    Ok(KernelMatrix { k, kind })
}

pub fn ntk_matrix<T: Scalar>(
    model: &ModelState<T>,
    x: &Matrix<T>,
    kind: KernelKind,
) -> Result<KernelMatrix<T>> {
    let fwd = model.forward_cache(x)?;
    ntk_from_cache(model, &fwd, &InputGram::new(x)?, kind)
}

/// Both-layer NTK between training columns `x` and test columns `x_test` (n×m).
pub fn ntk_cross<T: Scalar>(
    model: &ModelState<T>,
    x: &Matrix<T>,
    x_test: &Matrix<T>,
) -> Result<Matrix<T>> {
    ntk_cross_kind(model, x, x_test, KernelKind::Ntk)
}

pub fn ntk_cross_kind<T: Scalar>(
    model: &ModelState<T>,
    x: &Matrix<T>,
    x_test: &Matrix<T>,
    kind: KernelKind,
) -> Result<Matrix<T>> {
    if x_test.rows() != model.d() {
        return Err(Error::Dimension {
            context: "test input rows",
            expected: model.d(),
            got: x_test.rows(),
        });
    }
    let fwd = model.forward_cache(x)?;
    ntk_cross_from_cache(model, x, &fwd, x_test, kind)
}

pub fn ntk_cross_from_cache<T: Scalar>(
    model: &ModelState<T>,
    x: &Matrix<T>,
    fwd: &Forward<T>,
    x_test: &Matrix<T>,
    kind: KernelKind,
) -> Result<Matrix<T>> {
    if x_test.cols() == 0 {
        return Ok(Matrix::zeros(x.cols(), 0));
    }
    let fwd_t = model.forward_cache(x_test)?;
    let mut cross_gram = x.matmul_tn(x_test)?;
    cross_gram.scale_inplace(T::one() / T::from_usize_lossy(x.rows()));
    let mut k = ntk_first_layer(model, &fwd.s, &fwd_t.s, &cross_gram)?;
    if kind == KernelKind::Ntk {
        k.axpy_inplace(T::one(), &scaled_gram(&fwd.a, &fwd_t.a, model.h())?)?;
    }
    Ok(k)
}
