//! Two-layer network `f(x) = (1/√h) Σ v_i σ(w_iᵀx/√d)` with its loss and gradients.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::activation::{normalize_activation_with, ActivationSpec, BaseActivation, Normalization};
use crate::data::{cauchy_init, read_f64_vec, read_u64, write_f64, write_u64};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::{fill_standard_normal, Rng};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitKind {
    /// Standard normal `W` and `v`.
    Gaussian,
    /// Cauchy(0, scale) first layer, standard normal `v`.
    Cauchy { scale: f64 },
    /// Standard normal `W`, `v` uniform on `{±1}`.
    BoundedV,
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitKind::Gaussian => f.write_str("gaussian"),
            InitKind::Cauchy { scale } => write!(f, "cauchy:{scale}"),
            InitKind::BoundedV => f.write_str("bounded-v"),
        }
    }
}

impl FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(InitKind::Gaussian),
            "bounded-v" => Ok(InitKind::BoundedV),
            _ => {
                let scale = s
                    .strip_prefix("cauchy:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown init kind `{s}`")))?;
                Ok(InitKind::Cauchy { scale })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainLayers {
    Both,
    FirstOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    /// h×d first layer.
    pub w: Matrix<T>,
    pub v: Vec<T>,
    pub activation: ActivationSpec,
    pub init: InitKind,
}

/// Cached forward pass on a fixed input matrix.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    /// `σ(WX/√d)`, h×n.
    pub a: Matrix<T>,
    /// `σ'(WX/√d)`, h×n.
    pub s: Matrix<T>,
    pub f: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub w: Matrix<T>,
    pub v: Option<Vec<T>>,
}

pub fn init_model<T: Scalar>(
    h: usize,
    d: usize,
    activation: ActivationSpec,
    init: InitKind,
    rng: &mut Rng,
) -> Result<ModelState<T>> {
    if h == 0 || d == 0 {
        return Err(Error::InvalidParameter(format!("model dims h={h}, d={d} must be ≥ 1")));
    }
    let w = match init {
        InitKind::Cauchy { scale } => cauchy_init(h, d, scale, rng)?,
        InitKind::Gaussian | InitKind::BoundedV => {
            let mut data = vec![T::zero(); h * d];
            fill_standard_normal(rng, &mut data);
            Matrix::from_vec(h, d, data)?
        }
    };
    let v = match init {
        InitKind::BoundedV => (0..h)
            .map(|_| if rng.random::<bool>() { T::one() } else { -T::one() })
            .collect(),
        _ => {
            let mut v = vec![T::zero(); h];
            fill_standard_normal(rng, &mut v);
            v
        }
    };
    Ok(ModelState {
        w,
        v,
        activation,
        init,
    })
}

impl<T: Scalar> ModelState<T> {
    pub fn h(&self) -> usize {
        self.w.rows()
    }

    pub fn d(&self) -> usize {
        self.w.cols()
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.rows() != self.d() {
            return Err(Error::Dimension {
                context: "model input rows",
                expected: self.d(),
                got: x.rows(),
            });
        }
        Ok(())
    }

    /// `WX/√d`.
    pub fn preactivation(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_input(x)?;
        let mut z = self.w.matmul(x)?;
        z.scale_inplace(T::one() / T::from_usize_lossy(self.d()).sqrt());
        Ok(z)
    }

    pub fn forward_cache(&self, x: &Matrix<T>) -> Result<Forward<T>> {
        let z = self.preactivation(x)?;
        let act = self.activation;
        let a = z.map(|t| act.eval(t));
        let s = z.map(|t| act.derivative(t));
        let f = self.readout(&a);
        Ok(Forward { a, s, f })
    }

    fn readout(&self, a: &Matrix<T>) -> Vec<T> {
        let mut f = a.matvec_t(&self.v).expect("readout shapes agree");
        let inv = T::one() / T::from_usize_lossy(self.h()).sqrt();
        f.iter_mut().for_each(|x| *x *= inv);
        f
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        let z = self.preactivation(x)?;
        let act = self.activation;
        Ok(self.readout(&z.map(|t| act.eval(t))))
    }

    fn check_labels(&self, x: &Matrix<T>, y: &[T]) -> Result<()> {
        if y.len() != x.cols() {
            return Err(Error::Dimension {
                context: "labels",
                expected: x.cols(),
                got: y.len(),
            });
        }
        Ok(())
    }

    /// `(1/2n)‖y − f(X)‖²`.
    pub fn mse_loss(&self, x: &Matrix<T>, y: &[T]) -> Result<T> {
        self.check_labels(x, y)?;
        Ok(mse_from_residual_norm(self.residual_norm(x, y)?, y.len()))
    }

    /// `‖y − f(X)‖`.
    pub fn residual_norm(&self, x: &Matrix<T>, y: &[T]) -> Result<T> {
        self.check_labels(x, y)?;
        let f = self.forward(x)?;
        Ok(residual(y, &f).iter().map(|&r| r * r).sum::<T>().sqrt())
    }

    /// Descent-direction gradients: the update is `θ ← θ + η·G`.
    pub fn grad(&self, x: &Matrix<T>, y: &[T], layers: TrainLayers) -> Result<Gradients<T>> {
        self.check_labels(x, y)?;
        let fwd = self.forward_cache(x)?;
        self.grad_from_cache(x, y, &fwd, layers)
    }

    pub fn grad_from_cache(
        &self,
        x: &Matrix<T>,
        y: &[T],
        fwd: &Forward<T>,
        layers: TrainLayers,
    ) -> Result<Gradients<T>> {
        self.check_labels(x, y)?;
        let r = residual(y, &fwd.f);
        let n = T::from_usize_lossy(y.len());
        let h = T::from_usize_lossy(self.h());
        let d = T::from_usize_lossy(self.d());
        let (rows, cols) = fwd.s.shape();
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let vi = self.v[i];
            let srow = fwd.s.row(i);
            for ((mij, &sij), &rj) in m.row_mut(i).iter_mut().zip(srow).zip(&r) {
                *mij = vi * rj * sij;
            }
        }
        let mut gw = m.matmul_nt(x)?;
        gw.scale_inplace(T::one() / (n * (d * h).sqrt()));
        let gv = match layers {
            TrainLayers::Both => {
                let scale = T::one() / (n * h.sqrt());
                Some((0..rows).map(|i| dot(fwd.a.row(i), &r) * scale).collect())
            }
            TrainLayers::FirstOnly => None,
        };
        Ok(Gradients { w: gw, v: gv })
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.v.iter().all(|x| x.is_finite())
    }
}

pub fn residual<T: Scalar>(y: &[T], f: &[T]) -> Vec<T> {
    y.iter().zip(f).map(|(&a, &b)| a - b).collect()
}

pub fn mse_from_residual_norm<T: Scalar>(ell: T, n: usize) -> T {
    ell * ell / (T::c(2.0) * T::from_usize_lossy(n))
}

/// `(1/m)‖y − f‖²`, without the training loss's factor ½.
pub fn mean_squared_error<T: Scalar>(y: &[T], f: &[T]) -> Result<f64> {
    if y.len() != f.len() || y.is_empty() {
        return Err(Error::Dimension {
            context: "mean squared error",
            expected: y.len(),
            got: f.len(),
        });
    }
    let sum: f64 = y
        .iter()
        .zip(f)
        .map(|(&a, &b)| (a - b).to_f64_lossy().powi(2))
        .sum();
    Ok(sum / y.len() as f64)
}

/// `1 − MSE/Var(y)` with the population variance.
pub fn r_squared<T: Scalar>(y: &[T], f: &[T]) -> Result<f64> {
    let mse = mean_squared_error(y, f)?;
    let m = y.len() as f64;
    let mean = y.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / m;
    let var = y.iter().map(|v| (v.to_f64_lossy() - mean).powi(2)).sum::<f64>() / m;
    if var == 0.0 {
        return Err(Error::Degenerate("test labels have zero variance".into()));
    }
    Ok(1.0 - mse / var)
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    write_u64(w, s.len() as u64)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = read_u64(r)?;
    if len > 256 {
        return Err(Error::Format(format!("implausible string length {len}")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated string: {e}")))?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

/// Layout: `h, d` (u64), activation name and init kind (length-prefixed),
/// W row-major, v; all little-endian 64-bit.
pub fn write_checkpoint<T: Scalar>(w: &mut impl Write, model: &ModelState<T>) -> Result<()> {
    write_u64(w, model.h() as u64)?;
    write_u64(w, model.d() as u64)?;
    write_str(w, &activation_label(&model.activation))?;
    write_str(w, &model.init.to_string())?;
    for &x in model.w.as_slice().iter().chain(&model.v) {
        write_f64(w, x.to_f64_lossy())?;
    }
    Ok(())
}

pub fn read_checkpoint<T: Scalar>(r: &mut impl Read) -> Result<ModelState<T>> {
    let h = read_u64(r)?;
    let d = read_u64(r)?;
    if h == 0 || d == 0 || h.saturating_mul(d) > 1 << 34 {
        return Err(Error::Format(format!("implausible model shape {h}x{d}")));
    }
    let (h, d) = (h as usize, d as usize);
    let activation = parse_activation_label(&read_str(r)?)?;
    let init: InitKind = read_str(r)?
        .parse()
        .map_err(|e: Error| Error::Format(e.to_string()))?;
    let w = read_f64_vec(r, h * d)?.into_iter().map(T::c).collect();
    let v = read_f64_vec(r, h)?.into_iter().map(T::c).collect();
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(ModelState {
        w: Matrix::from_vec(h, d, w)?,
        v,
        activation,
        init,
    })
}

/// Base name, suffixed with `:centered` for the zero-mean-only convention.
fn activation_label(a: &ActivationSpec) -> String {
    match a.normalization {
        Normalization::UnitVariance => a.base.name().to_string(),
        Normalization::Centered => format!("{}:centered", a.base.name()),
    }
}

fn parse_activation_label(label: &str) -> Result<ActivationSpec> {
    let (name, norm) = match label.split_once(':') {
        None => (label, Normalization::UnitVariance),
        Some((name, "centered")) => (name, Normalization::Centered),
        Some(_) => return Err(Error::Format(format!("unknown activation label `{label}`"))),
    };
    let base: BaseActivation = name.parse().map_err(|e: Error| Error::Format(e.to_string()))?;
    normalize_activation_with(base, norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::normalize_activation;
    use crate::rng::{stream_rng, Stream};

    fn tiny(h: usize, d: usize, base: BaseActivation, seed: u64) -> ModelState<f64> {
        let act = normalize_activation(base).unwrap();
        init_model(h, d, act, InitKind::Gaussian, &mut stream_rng(seed, Stream::Weights)).unwrap()
    }

    fn random_x(d: usize, n: usize, seed: u64) -> Matrix<f64> {
        let mut rng = stream_rng(seed, Stream::Data);
        let mut data = vec![0.0; d * n];
        fill_standard_normal(&mut rng, &mut data);
        Matrix::from_vec(d, n, data).unwrap()
    }

    #[test]
    fn single_unit_linear() {
        let mut m = tiny(1, 3, BaseActivation::Linear, 1);
        m.v = vec![1.0];
        let x = random_x(3, 1, 2);
        let expected = dot(m.w.row(0), &x.column(0)) / 3f64.sqrt();
        assert!((m.forward(&x).unwrap()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_odd_activation() {
        let mut m = tiny(4, 3, BaseActivation::Tanh, 1);
        m.w = Matrix::zeros(4, 3);
        assert!(m.forward(&random_x(3, 5, 2)).unwrap().iter().all(|&f| f == 0.0));
    }

    #[test]
    fn naive_summation_oracle() {
        let m = tiny(6, 4, BaseActivation::Softplus, 3);
        let x = random_x(4, 5, 4);
        let f = m.forward(&x).unwrap();
        for j in 0..5 {
            let mut acc = 0.0;
            for i in 0..6 {
                let mut z = 0.0;
                for k in 0..4 {
                    z += m.w.get(i, k) * x.get(k, j);
                }
                acc += m.v[i] * m.activation.eval(z / 2.0);
            }
            assert!((f[j] - acc / 6f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_identities() {
        let m = tiny(5, 3, BaseActivation::Tanh, 5);
        let x = random_x(3, 7, 6);
        let f = m.forward(&x).unwrap();
        assert_eq!(m.mse_loss(&x, &f).unwrap(), 0.0);
        let g = m.grad(&x, &f, TrainLayers::Both).unwrap();
        assert!(g.w.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.v.unwrap().iter().all(|&v| v == 0.0));

        let x1 = random_x(3, 1, 7);
        let y1 = [m.forward(&x1).unwrap()[0] + 3.0];
        assert!((m.mse_loss(&x1, &y1).unwrap() - 4.5).abs() < 1e-12);
        assert!((m.residual_norm(&x1, &y1).unwrap() - 3.0).abs() < 1e-12);

        let y: Vec<f64> = (0..7).map(|i| i as f64 * 0.1).collect();
        let ell = m.residual_norm(&x, &y).unwrap();
        assert!((m.mse_loss(&x, &y).unwrap() * 14.0 - ell * ell).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_in_v() {
        let mut m = tiny(5, 3, BaseActivation::Tanh, 8);
        let x = random_x(3, 4, 9);
        let f = m.forward(&x).unwrap();
        m.v.iter_mut().for_each(|v| *v *= 2.0);
        for (a, b) in m.forward(&x).unwrap().iter().zip(&f) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn single_sample_gradient_by_hand() {
        let act = normalize_activation(BaseActivation::Linear).unwrap();
        let mut m = init_model::<f64>(1, 4, act, InitKind::Gaussian, &mut stream_rng(1, Stream::Weights)).unwrap();
        m.v = vec![0.7];
        let x = random_x(4, 1, 3);
        let y = [1.5];
        let f = m.forward(&x).unwrap()[0];
        let g = m.grad(&x, &y, TrainLayers::FirstOnly).unwrap();
        let d = 4f64.sqrt();
        for k in 0..4 {
            // n = h = 1: G_W = v·(y − f)·σ'·xᵀ/√d with σ' = 1/s.
            let expected = 0.7 * (y[0] - f) * x.get(k, 0) / (d * act.scale);
            assert!((g.w.get(0, k) - expected).abs() < 1e-12);
        }
        assert!(g.v.is_none());
    }

    #[test]
    fn init_kinds() {
        let act = normalize_activation(BaseActivation::Tanh).unwrap();
        let m: ModelState<f64> = init_model(50, 3, act, InitKind::BoundedV, &mut stream_rng(1, Stream::Weights)).unwrap();
        assert!(m.v.iter().all(|&v| v == 1.0 || v == -1.0));
        let a: ModelState<f64> = init_model(4, 3, act, InitKind::Cauchy { scale: 2.0 }, &mut stream_rng(1, Stream::Weights)).unwrap();
        let b: ModelState<f64> = init_model(4, 3, act, InitKind::Cauchy { scale: 2.0 }, &mut stream_rng(1, Stream::Weights)).unwrap();
        assert_eq!(a, b);
        for s in ["gaussian", "bounded-v", "cauchy:2.5"] {
            assert_eq!(s.parse::<InitKind>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let act = normalize_activation(BaseActivation::Tanh).unwrap();
        let m: ModelState<f64> = init_model(6, 4, act, InitKind::Cauchy { scale: 0.5 }, &mut stream_rng(2, Stream::Weights)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m).unwrap();
        let back: ModelState<f64> = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        buf[16] = 200;
        assert!(read_checkpoint::<f64>(&mut buf.as_slice()).is_err());

        let centered = normalize_activation_with(BaseActivation::Softplus, Normalization::Centered).unwrap();
        let m: ModelState<f64> = init_model(3, 2, centered, InitKind::BoundedV, &mut stream_rng(4, Stream::Weights)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m).unwrap();
        assert_eq!(read_checkpoint::<f64>(&mut buf.as_slice()).unwrap(), m);
        assert!(parse_activation_label("tanh:scaled").is_err());
    }
}
