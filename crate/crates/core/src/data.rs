//! Teacher models and seeded synthetic datasets.

use std::io::{Read, Write};

use rand_distr::{Cauchy, Distribution};
use serde::{Deserialize, Serialize};

use crate::activation::{normalize_activation, ActivationSpec, BaseActivation};
use crate::error::{Error, Result};
use crate::linalg::{norm2, Matrix};
use crate::rng::{fill_standard_normal, standard_normal, stream_rng, Rng, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherKind {
    SingleIndex,
    Mixed,
    HiddenManifold,
}

impl TeacherKind {
    fn code(self) -> u64 {
        match self {
            TeacherKind::SingleIndex => 0,
            TeacherKind::Mixed => 1,
            TeacherKind::HiddenManifold => 2,
        }
    }

    fn from_code(code: u64) -> Result<Self> {
        match code {
            0 => Ok(TeacherKind::SingleIndex),
            1 => Ok(TeacherKind::Mixed),
            2 => Ok(TeacherKind::HiddenManifold),
            _ => Err(Error::Format(format!("unknown teacher kind code {code}"))),
        }
    }
}

/// A concrete teacher `f*`, with its hidden signal already drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum Teacher {
    /// `σ*(xᵀβ) + (τ/d)‖x‖²`; single-index is the `τ = 0` case.
    Index {
        kind: TeacherKind,
        target: ActivationSpec,
        beta: Vec<f64>,
        tau: f64,
    },
    /// `aᵀσ*(W* x/√d)/√n_h`.
    HiddenManifold {
        target: ActivationSpec,
        a: Vec<f64>,
        w_star: Matrix<f64>,
    },
}

impl Teacher {
    pub fn single_index(target: ActivationSpec, beta: Vec<f64>) -> Result<Self> {
        Self::index(TeacherKind::SingleIndex, target, beta, 0.0)
    }

    pub fn mixed(target: ActivationSpec, beta: Vec<f64>, tau: f64) -> Result<Self> {
        Self::index(TeacherKind::Mixed, target, beta, tau)
    }

    fn index(kind: TeacherKind, target: ActivationSpec, beta: Vec<f64>, tau: f64) -> Result<Self> {
        let nb = norm2(&beta);
        if (nb - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("‖β‖ = {nb}, expected 1")));
        }
        Ok(Teacher::Index {
            kind,
            target,
            beta,
            tau,
        })
    }

    pub fn kind(&self) -> TeacherKind {
        match self {
            Teacher::Index { kind, .. } => *kind,
            Teacher::HiddenManifold { .. } => TeacherKind::HiddenManifold,
        }
    }

    pub fn target(&self) -> &ActivationSpec {
        match self {
            Teacher::Index { target, .. } | Teacher::HiddenManifold { target, .. } => target,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Teacher::Index { beta, .. } => beta.len(),
            Teacher::HiddenManifold { w_star, .. } => w_star.cols(),
        }
    }

    pub fn beta(&self) -> Option<&[f64]> {
        match self {
            Teacher::Index { beta, .. } => Some(beta),
            Teacher::HiddenManifold { .. } => None,
        }
    }

    pub fn tau(&self) -> f64 {
        match self {
            Teacher::Index { tau, .. } => *tau,
            Teacher::HiddenManifold { .. } => 0.0,
        }
    }

    /// `f*(x)` for one input.
    pub fn eval<T: Scalar>(&self, x: &[T]) -> Result<T> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                context: "teacher input",
                expected: self.dim(),
                got: x.len(),
            });
        }
        let d = T::from_usize_lossy(x.len());
        Ok(match self {
            Teacher::Index {
                target, beta, tau, ..
            } => {
                let proj: T = x.iter().zip(beta).map(|(&xi, &b)| xi * T::c(b)).sum();
                let sq: T = x.iter().map(|&xi| xi * xi).sum();
                target.eval(proj) + T::c(*tau) * sq / d
            }
            Teacher::HiddenManifold { target, a, w_star } => {
                let mut acc = T::zero();
                for (k, &ak) in a.iter().enumerate() {
                    let z: T = w_star.row(k).iter().zip(x).map(|(&w, &xi)| T::c(w) * xi).sum();
                    acc += T::c(ak) * target.eval(z / d.sqrt());
                }
                acc / T::from_usize_lossy(a.len()).sqrt()
            }
        })
    }

    /// `f*` applied to every column of `x` (d×n).
    pub fn eval_columns<T: Scalar>(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        if x.rows() != self.dim() {
            return Err(Error::Dimension {
                context: "teacher input",
                expected: self.dim(),
                got: x.rows(),
            });
        }
        let d = T::from_usize_lossy(x.rows());
        let n = x.cols();
        match self {
            Teacher::Index {
                target, beta, tau, ..
            } => {
                let beta_t: Vec<T> = beta.iter().map(|&b| T::c(b)).collect();
                let proj = x.matvec_t(&beta_t)?;
                let mut sq = vec![T::zero(); n];
                for i in 0..x.rows() {
                    for (s, &v) in sq.iter_mut().zip(x.row(i)) {
                        *s += v * v;
                    }
                }
                let tau = T::c(*tau);
                Ok(proj
                    .iter()
                    .zip(&sq)
                    .map(|(&p, &s)| target.eval(p) + tau * s / d)
                    .collect())
            }
            Teacher::HiddenManifold { target, a, w_star } => {
                let w: Matrix<T> = Matrix::from_fn(w_star.rows(), w_star.cols(), |i, j| T::c(w_star.get(i, j)));
                let z = w.matmul(x)?;
                let scale = T::one() / d.sqrt();
                let norm = T::from_usize_lossy(a.len()).sqrt();
                let mut out = vec![T::zero(); n];
                for (k, &ak) in a.iter().enumerate() {
                    let ak = T::c(ak);
                    for (o, &zk) in out.iter_mut().zip(z.row(k)) {
                        *o += ak * target.eval(zk * scale);
                    }
                }
                out.iter_mut().for_each(|o| *o /= norm);
                Ok(out)
            }
        }
    }
}

/// Declarative teacher description; the signal is drawn from the teacher stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    pub kind: TeacherKind,
    pub target: BaseActivation,
    #[serde(default)]
    pub tau: f64,
    /// Hidden width `n_h` of the hidden-manifold teacher.
    #[serde(default = "default_manifold_width")]
    pub manifold_width: usize,
}

fn default_manifold_width() -> usize {
    16
}

impl TeacherConfig {
    pub fn build(&self, d: usize, seed: u64) -> Result<Teacher> {
        let target = normalize_activation(self.target)?;
        let mut rng = stream_rng(seed, Stream::Teacher);
        match self.kind {
            TeacherKind::SingleIndex | TeacherKind::Mixed => {
                let beta = random_unit_vector(d, &mut rng);
                let tau = if self.kind == TeacherKind::Mixed { self.tau } else { 0.0 };
                Teacher::index(self.kind, target, beta, tau)
            }
            TeacherKind::HiddenManifold => {
                if self.manifold_width == 0 {
                    return Err(Error::InvalidParameter("manifold_width must be ≥ 1".into()));
                }
                let mut a = vec![0.0; self.manifold_width];
                fill_standard_normal(&mut rng, &mut a);
                let mut w = vec![0.0; self.manifold_width * d];
                fill_standard_normal(&mut rng, &mut w);
                Ok(Teacher::HiddenManifold {
                    target,
                    a,
                    w_star: Matrix::from_vec(self.manifold_width, d, w)?,
                })
            }
        }
    }
}

pub fn random_unit_vector(d: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let mut v = vec![0.0; d];
        fill_standard_normal(rng, &mut v);
        let n = norm2(&v);
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct Dataset<T> {
    /// d×n, one sample per column.
    pub x: Matrix<T>,
    pub y: Vec<T>,
    pub teacher: Teacher,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl<T: Scalar> Dataset<T> {
    pub fn d(&self) -> usize {
        self.x.rows()
    }

    pub fn n(&self) -> usize {
        self.x.cols()
    }
}

/// Draws `n` standard Gaussian inputs in `R^d` and labels `f*(x) + ε`.
/// Train and test splits use disjoint streams of the same seed.
pub fn sample_dataset<T: Scalar>(
    d: usize,
    n: usize,
    teacher: &Teacher,
    noise_sigma: f64,
    seed: u64,
    split: Split,
) -> Result<Dataset<T>> {
    if d == 0 || n == 0 {
        return Err(Error::InvalidParameter(format!("dataset dims d={d}, n={n} must be ≥ 1")));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise σ_ε = {noise_sigma} must be ≥ 0")));
    }
    let (x_stream, noise_stream) = match split {
        Split::Train => (Stream::Data, Stream::Noise),
        Split::Test => (Stream::Test, Stream::TestNoise),
    };
    let mut rng = stream_rng(seed, x_stream);
    // Column by column so a larger n extends a smaller one.
    let mut colmajor = vec![T::zero(); d * n];
    fill_standard_normal(&mut rng, &mut colmajor);
    let x = Matrix::from_fn(d, n, |i, j| colmajor[j * d + i]);
    let mut y = teacher.eval_columns(&x)?;
    if noise_sigma > 0.0 {
        let mut nrng = stream_rng(seed, noise_stream);
        let s = T::c(noise_sigma);
        for yi in &mut y {
            *yi += s * standard_normal::<T>(&mut nrng);
        }
    }
    Ok(Dataset {
        x,
        y,
        teacher: teacher.clone(),
        noise_sigma,
        seed,
    })
}

/// i.i.d. Cauchy(0, scale) matrix.
pub fn cauchy_init<T: Scalar>(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Result<Matrix<T>> {
    if !(scale > 0.0) {
        return Err(Error::InvalidParameter(format!("Cauchy scale {scale} must be > 0")));
    }
    let dist = Cauchy::new(0.0, scale).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let data = (0..rows * cols).map(|_| T::c(dist.sample(rng))).collect();
    Ok(Matrix::from_vec(rows, cols, data)?)
}

fn activation_code(b: BaseActivation) -> u64 {
    BaseActivation::ALL.iter().position(|&x| x == b).unwrap() as u64
}

fn activation_from_code(code: u64) -> Result<BaseActivation> {
    BaseActivation::ALL
        .get(code as usize)
        .copied()
        .ok_or_else(|| Error::Format(format!("unknown activation code {code}")))
}

pub(crate) fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated data: {e}")))?;
    let v = f64::from_le_bytes(b);
    if !v.is_finite() {
        return Err(Error::Format("non-finite value".into()));
    }
    Ok(v)
}

pub(crate) fn read_f64_vec(r: &mut impl Read, len: usize) -> Result<Vec<f64>> {
    (0..len).map(|_| read_f64(r)).collect()
}

/// Layout: `d, n, seed, kind, σ_ε, τ` (little-endian 64-bit), X column-major,
/// y, then a teacher block (target activation code and the teacher signal).
pub fn write_dataset<T: Scalar>(w: &mut impl Write, ds: &Dataset<T>) -> Result<()> {
    let (d, n) = (ds.d(), ds.n());
    write_u64(w, d as u64)?;
    write_u64(w, n as u64)?;
    write_u64(w, ds.seed)?;
    write_u64(w, ds.teacher.kind().code())?;
    write_f64(w, ds.noise_sigma)?;
    write_f64(w, ds.teacher.tau())?;
    for j in 0..n {
        for i in 0..d {
            write_f64(w, ds.x.get(i, j).to_f64_lossy())?;
        }
    }
    for &v in &ds.y {
        write_f64(w, v.to_f64_lossy())?;
    }
    write_u64(w, activation_code(ds.teacher.target().base))?;
    match &ds.teacher {
        Teacher::Index { beta, .. } => {
            for &b in beta {
                write_f64(w, b)?;
            }
        }
        Teacher::HiddenManifold { a, w_star, .. } => {
            write_u64(w, a.len() as u64)?;
            for &v in a.iter().chain(w_star.as_slice()) {
                write_f64(w, v)?;
            }
        }
    }
    Ok(())
}

pub fn read_dataset<T: Scalar>(r: &mut impl Read) -> Result<Dataset<T>> {
    const MAX_ENTRIES: u64 = 1 << 34;
    let d = read_u64(r)?;
    let n = read_u64(r)?;
    if d == 0 || n == 0 || d.saturating_mul(n) > MAX_ENTRIES {
        return Err(Error::Format(format!("implausible dataset shape {d}x{n}")));
    }
    let (d, n) = (d as usize, n as usize);
    let seed = read_u64(r)?;
    let kind = TeacherKind::from_code(read_u64(r)?)?;
    let noise_sigma = read_f64(r)?;
    let tau = read_f64(r)?;
    let cols = read_f64_vec(r, d * n)?;
    let x = Matrix::from_fn(d, n, |i, j| T::c(cols[j * d + i]));
    let y = read_f64_vec(r, n)?.into_iter().map(T::c).collect();
    let target = normalize_activation(activation_from_code(read_u64(r)?)?)?;
    let teacher = match kind {
        TeacherKind::SingleIndex | TeacherKind::Mixed => {
            let beta = read_f64_vec(r, d)?;
            Teacher::index(kind, target, beta, tau)
                .map_err(|e| Error::Format(e.to_string()))?
        }
        TeacherKind::HiddenManifold => {
            let nh = read_u64(r)? as usize;
            if nh == 0 || nh as u64 > MAX_ENTRIES / d as u64 {
                return Err(Error::Format(format!("implausible manifold width {nh}")));
            }
            let a = read_f64_vec(r, nh)?;
            let w = read_f64_vec(r, nh * d)?;
            Teacher::HiddenManifold {
                target,
                a,
                w_star: Matrix::from_vec(nh, d, w)?,
            }
        }
    };
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after dataset".into()));
    }
    Ok(Dataset {
        x,
        y,
        teacher,
        noise_sigma,
        seed,
    })
}
