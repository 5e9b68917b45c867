//! Lazy-training baseline: kernel regression with the initial NTK around the
//! network at initialization, `f̂(x) = f₀(x) + (y − f₀(X))ᵀ K(X,X)⁺ K(X,x)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{ntk_cross_from_cache, ntk_from_cache, InputGram, KernelKind};
use crate::linalg::{Matrix, PsdSolver};
use crate::model::{mean_squared_error, r_squared, residual, Forward, ModelState};
use crate::scalar::Scalar;

pub const DEFAULT_SOLVE_TOL: f64 = 1e-10;
const PREDICT_CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LazyOptions {
    /// Eigenvalues below `tol·λ_max` are dropped from the pseudo-inverse.
    pub tol: f64,
    pub kernel: KernelKind,
    /// Optional ridge `λ` in `(K + λI)⁻¹`.
    pub ridge: Option<f64>,
}

impl Default for LazyOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_SOLVE_TOL,
            kernel: KernelKind::Ntk,
            ridge: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LazyPredictor<T> {
    model: ModelState<T>,
    x: Matrix<T>,
    forward: Forward<T>,
    residual: Vec<T>,
    solver: PsdSolver<T>,
    coef: Vec<T>,
    options: LazyOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LazyMetrics {
    pub test_mse: f64,
    pub r2: f64,
}

pub fn fit_lazy<T: Scalar>(
    model: &ModelState<T>,
    x: &Matrix<T>,
    y: &[T],
    options: LazyOptions,
) -> Result<LazyPredictor<T>> {
    if options.kernel == KernelKind::Ck {
        return Err(Error::InvalidParameter("lazy baseline needs an NTK kernel".into()));
    }
    if y.len() != x.cols() {
        return Err(Error::Dimension {
            context: "lazy labels",
            expected: x.cols(),
            got: y.len(),
        });
    }
    if !(options.tol >= 0.0) || options.ridge.is_some_and(|r| !(r > 0.0)) {
        return Err(Error::InvalidParameter("tolerance must be ≥ 0 and ridge > 0".into()));
    }
    let forward = model.forward_cache(x)?;
    let k = ntk_from_cache(model, &forward, &InputGram::new(x)?, options.kernel)?.k;
    let solver = PsdSolver::new(&k, T::c(options.tol))?;
    let residual = residual(y, &forward.f);
    let coef = match options.ridge {
        Some(r) => solver.solve_ridge(&residual, T::c(r))?,
        None => solver.solve(&residual)?,
    };
    Ok(LazyPredictor {
        model: model.clone(),
        x: x.clone(),
        forward,
        residual,
        solver,
        coef,
        options,
    })
}

impl<T: Scalar> LazyPredictor<T> {
    pub fn residual(&self) -> &[T] {
        &self.residual
    }

    pub fn options(&self) -> LazyOptions {
        self.options
    }

    /// Kernel eigenvalues, descending.
    pub fn kernel_eigenvalues(&self) -> &[T] {
        self.solver.eigenvalues()
    }

    pub fn kernel_rank(&self) -> usize {
        self.solver.rank()
    }

    /// Same predictor with a different ridge, reusing the eigendecomposition.
    pub fn with_ridge(&self, ridge: Option<f64>) -> Result<Self> {
        let coef = match ridge {
            Some(r) if r > 0.0 => self.solver.solve_ridge(&self.residual, T::c(r))?,
            Some(r) => return Err(Error::InvalidParameter(format!("ridge {r} must be > 0"))),
            None => self.solver.solve(&self.residual)?,
        };
        let mut out = self.clone();
        out.coef = coef;
        out.options.ridge = ridge;
        Ok(out)
    }

    pub fn predict(&self, x_test: &Matrix<T>) -> Result<Vec<T>> {
        if x_test.rows() != self.model.d() {
            return Err(Error::Dimension {
                context: "lazy test input rows",
                expected: self.model.d(),
                got: x_test.rows(),
            });
        }
        let m = x_test.cols();
        let mut out = Vec::with_capacity(m);
        let idx: Vec<usize> = (0..m).collect();
        for chunk in idx.chunks(PREDICT_CHUNK) {
            let xc = x_test.select_columns(chunk);
            let cross = ntk_cross_from_cache(&self.model, &self.x, &self.forward, &xc, self.options.kernel)?;
            let f0 = self.model.forward(&xc)?;
            let corr = cross.matvec_t(&self.coef)?;
            out.extend(f0.iter().zip(&corr).map(|(&a, &b)| a + b));
        }
        Ok(out)
    }

    pub fn metrics(&self, x_test: &Matrix<T>, y_test: &[T]) -> Result<LazyMetrics> {
        let f = self.predict(x_test)?;
        Ok(LazyMetrics {
            test_mse: mean_squared_error(y_test, &f)?,
            r2: r_squared(y_test, &f)?,
        })
    }
}

pub fn predict_lazy<T: Scalar>(p: &LazyPredictor<T>, x_test: &Matrix<T>) -> Result<Vec<T>> {
    p.predict(x_test)
}

pub fn lazy_metrics<T: Scalar>(p: &LazyPredictor<T>, x_test: &Matrix<T>, y_test: &[T]) -> Result<LazyMetrics> {
    p.metrics(x_test, y_test)
}
