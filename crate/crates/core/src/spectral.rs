//! Spectrum-derived summaries: histograms, Q-Q comparison, bulk edges and
//! spikes, power-law tail fits, kernel-target alignment and norm changes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    frobenius_norm, lanczos, operator_norm, sym_eig, sym_eigenvalues,
    two_inf_norm, LanczosTarget, Matrix,
};
use crate::quadrature::gauss_legendre;
use crate::scalar::Scalar;

pub const DEFAULT_TAIL_FRACTION: f64 = 0.1;
pub const DEFAULT_SPIKE_MARGIN: f64 = 0.05;
const MIN_TAIL_POINTS: usize = 20;

fn sorted_desc(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.partial_cmp(a).expect("finite spectrum"));
    v
}

/// All eigenvalues of a symmetric matrix, descending, as `f64`.
pub fn spectrum<T: Scalar>(m: &Matrix<T>) -> Result<Vec<f64>> {
    Ok(sym_eigenvalues(m)?.into_iter().map(|v| v.to_f64_lossy()).collect())
}

/// `WᵀW/h`, whose spectrum is the squared singular values of `W/√h`.
pub fn weight_gram<T: Scalar>(w: &Matrix<T>) -> Result<Matrix<T>> {
    let mut g = w.matmul_tn(w)?;
    g.scale_inplace(T::one() / T::from_usize_lossy(w.rows()));
    g.symmetrize_inplace();
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

const DENSE_TOP_MAX: usize = 64;

/// Leading `count` eigenpairs of a symmetric matrix.
pub fn top_eigenpairs<T: Scalar>(m: &Matrix<T>, count: usize) -> Result<TopEigen> {
    let n = m.rows();
    let count = count.min(n);
    if count == 0 {
        return Err(Error::Degenerate("no eigenpairs requested".into()));
    }
    if n <= DENSE_TOP_MAX {
        let e = sym_eig(m)?;
        return Ok(TopEigen {
            values: e.eigenvalues[..count].iter().map(|v| v.to_f64_lossy()).collect(),
            vectors: (0..count)
                .map(|j| e.vector(j).iter().map(|v| v.to_f64_lossy()).collect())
                .collect(),
        });
    }
    let ritz = lanczos(n, count, LanczosTarget::Largest, 1e-10, 20 * n.max(100), |x, y| {
        let out = m.matvec(x).expect("square operator");
        y.copy_from_slice(&out);
    })?;
    Ok(TopEigen {
        values: ritz.values.iter().map(|v| v.to_f64_lossy()).collect(),
        vectors: ritz
            .vectors
            .iter()
            .map(|v| v.iter().map(|x| x.to_f64_lossy()).collect())
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub densities: Vec<f64>,
}

/// Density-normalized histogram over `[min, max]`.
pub fn esd(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::Degenerate("empty spectrum".into()));
    }
    if bins == 0 {
        return Err(Error::InvalidParameter("bins must be ≥ 1".into()));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        let half = 0.5 * lo.abs().max(1.0);
        (lo - half, lo + half)
    };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    for &x in values {
        let idx = (((x - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let total = values.len() as f64;
    let densities = counts.iter().map(|&c| c as f64 / (total * width)).collect();
    Ok(Histogram { edges, densities })
}

/// Linear-interpolation quantile of an ascending sample.
fn quantile(sorted_asc: &[f64], p: f64) -> f64 {
    let pos = p * (sorted_asc.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= sorted_asc.len() {
        sorted_asc[sorted_asc.len() - 1]
    } else {
        sorted_asc[i] + frac * (sorted_asc[i + 1] - sorted_asc[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqComparison {
    pub pairs: Vec<(f64, f64)>,
    pub max_deviation: f64,
}

/// Paired quantiles at `k/(m+1)`, `m = min(|a|, |b|)`.
pub fn qq_pairs(a: &[f64], b: &[f64]) -> Result<QqComparison> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Degenerate("empty spectrum".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let m = sa.len().min(sb.len());
    let pairs: Vec<(f64, f64)> = (1..=m)
        .map(|k| {
            let p = k as f64 / (m + 1) as f64;
            (quantile(&sa, p), quantile(&sb, p))
        })
        .collect();
    let max_deviation = pairs.iter().map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    Ok(QqComparison {
        pairs,
        max_deviation,
    })
}

/// The `(trim+1)`-th largest initial eigenvalue.
pub fn bulk_edge(init_eigenvalues: &[f64], trim: usize) -> Result<f64> {
    if init_eigenvalues.len() <= trim {
        return Err(Error::InvalidParameter(format!(
            "trim {trim} leaves no eigenvalues out of {}",
            init_eigenvalues.len()
        )));
    }
    Ok(sorted_desc(init_eigenvalues)[trim])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spike {
    /// Rank in the descending spectrum.
    pub index: usize,
    pub value: f64,
}

/// Eigenvalues strictly above `edge·(1 + margin)`.
pub fn spike_detect(eigenvalues: &[f64], edge: f64, margin: f64) -> Vec<Spike> {
    let threshold = edge * (1.0 + margin);
    sorted_desc(eigenvalues)
        .into_iter()
        .enumerate()
        .take_while(|&(_, v)| v > threshold)
        .map(|(index, value)| Spike { index, value })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub xmin: f64,
    /// Kolmogorov–Smirnov distance between the tail and the fitted Pareto law.
    pub ks_distance: f64,
    pub tail_len: usize,
}

/// Hill estimator `α = 1 + k/Σ ln(λ_i/x_min)` over the top `tail_fraction`.
pub fn power_law_alpha(eigenvalues: &[f64], tail_fraction: f64) -> Result<PowerLawFit> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("tail fraction {tail_fraction} not in (0, 1]")));
    }
    let sorted = sorted_desc(eigenvalues);
    let k = (tail_fraction * sorted.len() as f64).floor() as usize;
    if k < MIN_TAIL_POINTS {
        return Err(Error::Degenerate(format!(
            "power-law tail has {k} points, need at least {MIN_TAIL_POINTS}"
        )));
    }
    let tail = &sorted[..k];
    let xmin = tail[k - 1];
    if xmin <= 0.0 {
        return Err(Error::Degenerate("power-law tail contains non-positive values".into()));
    }
    let log_sum: f64 = tail.iter().map(|&x| (x / xmin).ln()).sum();
    if log_sum <= 0.0 {
        return Err(Error::Degenerate("power-law tail has zero log-spacing".into()));
    }
    let alpha = 1.0 + k as f64 / log_sum;
    let ks_distance = pareto_ks(tail, xmin, alpha);
    Ok(PowerLawFit {
        alpha,
        xmin,
        ks_distance,
        tail_len: k,
    })
}

fn pareto_ks(tail_desc: &[f64], xmin: f64, alpha: f64) -> f64 {
    let k = tail_desc.len() as f64;
    tail_desc
        .iter()
        .rev()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = 1.0 - (x / xmin).powf(-(alpha - 1.0));
            let hi = (i + 1) as f64 / k;
            let lo = i as f64 / k;
            (cdf - hi).abs().max((cdf - lo).abs())
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeavyTailMetrics {
    pub weighted_alpha: f64,
    pub log_alpha_norm: f64,
}

/// `α·λ₁` and `ln Σ λ_i^α`. Tiny negative roundoff eigenvalues count as zero.
pub fn heavy_tail_metrics(eigenvalues: &[f64], alpha: f64) -> Result<HeavyTailMetrics> {
    if eigenvalues.is_empty() || !(alpha > 0.0) {
        return Err(Error::InvalidParameter("need a nonempty spectrum and α > 0".into()));
    }
    let lmax = eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = eigenvalues.iter().map(|&l| l.max(0.0).powf(alpha)).sum();
    Ok(HeavyTailMetrics {
        weighted_alpha: alpha * lmax,
        log_alpha_norm: sum.ln(),
    })
}

/// Kernel-target alignment `yᵀKy/(‖K‖_F‖y‖²)`.
pub fn kta<T: Scalar>(k: &Matrix<T>, y: &[T]) -> Result<f64> {
    if !k.is_square() || k.rows() != y.len() {
        return Err(Error::Dimension {
            context: "kernel-target alignment",
            expected: k.rows(),
            got: y.len(),
        });
    }
    let kf = frobenius_norm(k).to_f64_lossy();
    let yy: f64 = y.iter().map(|v| v.to_f64_lossy().powi(2)).sum();
    if kf == 0.0 || yy == 0.0 {
        return Err(Error::Degenerate("zero kernel or zero target".into()));
    }
    let ky = k.matvec(y)?;
    let num: f64 = ky.iter().zip(y).map(|(a, b)| a.to_f64_lossy() * b.to_f64_lossy()).sum();
    Ok(num / (kf * yy))
}

/// `|uᵀt|/(‖u‖‖t‖)`.
pub fn alignment(u: &[f64], t: &[f64]) -> Result<f64> {
    if u.len() != t.len() {
        return Err(Error::Dimension {
            context: "alignment",
            expected: u.len(),
            got: t.len(),
        });
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nt = t.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nt == 0.0 {
        return Err(Error::Degenerate("zero vector in alignment".into()));
    }
    let dot: f64 = u.iter().zip(t).map(|(a, b)| a * b).sum();
    Ok((dot.abs() / (nu * nt)).min(1.0))
}

/// Changes of weights (divided by √d) and kernels relative to initialization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NormChange {
    pub w_op: f64,
    pub w_fro: f64,
    pub w_2inf: f64,
    pub ck_op: Option<f64>,
    pub ck_fro: Option<f64>,
    pub ntk_op: Option<f64>,
    pub ntk_fro: Option<f64>,
}

pub fn weight_change<T: Scalar>(w0: &Matrix<T>, wt: &Matrix<T>) -> Result<(f64, f64, f64)> {
    let diff = wt.sub(w0)?;
    let sd = (w0.cols() as f64).sqrt();
    Ok((
        operator_norm(&diff)?.to_f64_lossy() / sd,
        frobenius_norm(&diff).to_f64_lossy() / sd,
        two_inf_norm(&diff).to_f64_lossy() / sd,
    ))
}

/// Operator and Frobenius norm of `K_t − K_0`, without forming the difference.
pub fn kernel_change<T: Scalar>(k0: &Matrix<T>, kt: &Matrix<T>) -> Result<(f64, f64)> {
    if k0.shape() != kt.shape() || !k0.is_square() {
        return Err(Error::Dimension {
            context: "kernel change",
            expected: k0.rows(),
            got: kt.rows(),
        });
    }
    let n = k0.rows();
    let fro = k0
        .as_slice()
        .iter()
        .zip(kt.as_slice())
        .map(|(&a, &b)| (b - a).to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt();
    if fro == 0.0 || n == 0 {
        return Ok((0.0, fro));
    }
    let ritz = lanczos(n, 1, LanczosTarget::LargestMagnitude, 1e-12, 10_000, |x, y| {
        let a = kt.matvec(x).expect("square operator");
        let b = k0.matvec(x).expect("square operator");
        for ((yi, ai), bi) in y.iter_mut().zip(a).zip(b) {
            *yi = ai - bi;
        }
    })?;
    Ok((ritz.values[0].to_f64_lossy().abs(), fro))
}

pub fn norm_change_report<T: Scalar>(
    w0: &Matrix<T>,
    wt: &Matrix<T>,
    ck: Option<(&Matrix<T>, &Matrix<T>)>,
    ntk: Option<(&Matrix<T>, &Matrix<T>)>,
) -> Result<NormChange> {
    let (w_op, w_fro, w_2inf) = weight_change(w0, wt)?;
    let ck = ck.map(|(a, b)| kernel_change(a, b)).transpose()?;
    let ntk = ntk.map(|(a, b)| kernel_change(a, b)).transpose()?;
    Ok(NormChange {
        w_op,
        w_fro,
        w_2inf,
        ck_op: ck.map(|c| c.0),
        ck_fro: ck.map(|c| c.1),
        ntk_op: ntk.map(|c| c.0),
        ntk_fro: ntk.map(|c| c.1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralOptions {
    pub tail_fraction: f64,
    pub spike_margin: f64,
    pub edge_trim: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            tail_fraction: DEFAULT_TAIL_FRACTION,
            spike_margin: DEFAULT_SPIKE_MARGIN,
            edge_trim: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub eigenvalues: Vec<f64>,
    pub bulk_edge: f64,
    pub spikes: Vec<Spike>,
    pub power_law: Option<PowerLawFit>,
    pub heavy_tail: Option<HeavyTailMetrics>,
    pub kta: Option<f64>,
    pub leading_alignment: Option<f64>,
}

impl SpectralReport {
    /// Summary of `eigenvalues` against a bulk edge taken from an initial spectrum.
    pub fn new(eigenvalues: &[f64], edge: f64, opts: &SpectralOptions) -> Self {
        let eigenvalues = sorted_desc(eigenvalues);
        let power_law = power_law_alpha(&eigenvalues, opts.tail_fraction).ok();
        let heavy_tail = power_law.and_then(|p| heavy_tail_metrics(&eigenvalues, p.alpha).ok());
        Self {
            spikes: spike_detect(&eigenvalues, edge, opts.spike_margin),
            eigenvalues,
            bulk_edge: edge,
            power_law,
            heavy_tail,
            kta: None,
            leading_alignment: None,
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        self.power_law.map(|p| p.alpha)
    }
}

/// Marchenko–Pastur law of `WᵀW/h` for `W` with i.i.d. unit-variance entries
/// and ratio `γ = d/h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarchenkoPastur {
    pub ratio: f64,
    pub variance: f64,
}

impl MarchenkoPastur {
    pub fn new(ratio: f64, variance: f64) -> Result<Self> {
        if !(ratio > 0.0 && variance > 0.0) {
            return Err(Error::InvalidParameter("MP ratio and variance must be > 0".into()));
        }
        Ok(Self { ratio, variance })
    }

    pub fn support(&self) -> (f64, f64) {
        let s = self.ratio.sqrt();
        (self.variance * (1.0 - s).powi(2), self.variance * (1.0 + s).powi(2))
    }

    /// Density of the continuous part.
    pub fn density(&self, x: f64) -> f64 {
        let (a, b) = self.support();
        if x <= a || x >= b || x <= 0.0 {
            return 0.0;
        }
        ((b - x) * (x - a)).sqrt() / (2.0 * std::f64::consts::PI * self.ratio * self.variance * x)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let atom = if self.ratio > 1.0 { 1.0 - 1.0 / self.ratio } else { 0.0 };
        let (a, b) = self.support();
        if x < 0.0 {
            return 0.0;
        }
        if x <= a {
            return atom;
        }
        if x >= b {
            return 1.0;
        }
        // x = a + (b−a)(1 − cos θ)/2 removes the square-root endpoint singularity.
        let theta_x = (1.0 - 2.0 * (x - a) / (b - a)).clamp(-1.0, 1.0).acos();
        let (gx, gw) = gauss_legendre(32);
        let panels = 8;
        let width = theta_x / panels as f64;
        let mut integral = 0.0;
        for p in 0..panels {
            let lo = p as f64 * width;
            for (&t, &w) in gx.iter().zip(&gw) {
                let theta = lo + 0.5 * width * (t + 1.0);
                let xv = a + 0.5 * (b - a) * (1.0 - theta.cos());
                let jac = 0.5 * (b - a) * theta.sin();
                integral += 0.5 * width * w * self.density(xv) * jac;
            }
        }
        (atom + integral).min(1.0)
    }

    /// Kolmogorov–Smirnov distance between an empirical spectrum and this law.
    pub fn ks_distance(&self, eigenvalues: &[f64]) -> f64 {
        let mut s = eigenvalues.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = s.len() as f64;
        s.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = self.cdf(x);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_normalization() {
        let h = esd(&[2.0; 10], 5).unwrap();
        let width = h.edges[1] - h.edges[0];
        let occupied: Vec<_> = h.densities.iter().filter(|&&d| d > 0.0).collect();
        assert_eq!(occupied.len(), 1);
        assert!((occupied[0] - 1.0 / width).abs() < 1e-12);
        let vals: Vec<f64> = (0..97).map(|i| ((i * 37) % 101) as f64 * 0.13).collect();
        let h = esd(&vals, 13).unwrap();
        let total: f64 = h
            .densities
            .iter()
            .zip(h.edges.windows(2))
            .map(|(d, e)| d * (e[1] - e[0]))
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(esd(&[], 3).is_err());
    }

    #[test]
    fn qq_identity_and_shift() {
        let a: Vec<f64> = (0..50).map(|i| (i as f64).sqrt()).collect();
        assert_eq!(qq_pairs(&a, &a).unwrap().max_deviation, 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + 0.7).collect();
        assert!((qq_pairs(&a, &b).unwrap().max_deviation - 0.7).abs() < 1e-12);
    }

    #[test]
    fn edges_and_spikes() {
        assert_eq!(bulk_edge(&[1.0, 5.0, 3.0], 0).unwrap(), 5.0);
        assert_eq!(bulk_edge(&[1.0, 5.0, 3.0], 1).unwrap(), 3.0);
        assert!(bulk_edge(&[1.0], 1).is_err());
        assert!(spike_detect(&[0.5, 0.9, 1.0], 1.0, 0.05).is_empty());
        let s = spike_detect(&[0.5, 2.0, 0.9], 1.0, 0.05);
        assert_eq!(s, vec![Spike { index: 0, value: 2.0 }]);
        // Strict inequality at the threshold.
        assert!(spike_detect(&[1.05], 1.0, 0.05).is_empty());
    }

    #[test]
    fn heavy_tail_examples() {
        let m = heavy_tail_metrics(&[1.0], 2.0).unwrap();
        assert_eq!(m.weighted_alpha, 2.0);
        assert_eq!(m.log_alpha_norm, 0.0);
        let m = heavy_tail_metrics(&[std::f64::consts::E, 0.0], 1.0).unwrap();
        assert!((m.log_alpha_norm - 1.0).abs() < 1e-15);
    }

    #[test]
    fn power_law_degenerate_cases() {
        assert!(power_law_alpha(&[3.0; 500], 0.1).is_err());
        assert!(power_law_alpha(&[3.0; 100], 0.1).is_err());
        let mut v: Vec<f64> = (1..=300).map(|i| i as f64).collect();
        v[299] = -1.0;
        assert!(power_law_alpha(&v, 1.0).is_err());
    }

    #[test]
    fn kta_examples() {
        let y = [1.0, -2.0, 0.5];
        let yyt = Matrix::outer(&y, &y);
        assert!((kta(&yyt, &y).unwrap() - 1.0).abs() < 1e-15);
        let i = Matrix::<f64>::identity(3);
        assert!((kta(&i, &y).unwrap() - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        let z = [2.0, 1.0, 0.0];
        assert!(kta(&Matrix::outer(&z, &z), &y).unwrap().abs() < 1e-15);
        assert!(kta(&Matrix::zeros(3, 3), &y).is_err());
    }

    #[test]
    fn alignment_examples() {
        assert!((alignment(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(alignment(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert!(alignment(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn norm_change_rank_one() {
        let w0 = Matrix::from_fn(4, 9, |i, j| (i * 9 + j) as f64 * 0.1);
        let u = [1.0, 2.0, 0.0, -1.0];
        let v = [0.5; 9];
        let wt = w0.add(&Matrix::outer(&u, &v)).unwrap();
        let r = norm_change_report(&w0, &wt, None, None).unwrap();
        let expected = 6f64.sqrt() * 1.5 / 3.0;
        assert!((r.w_op - expected).abs() < 1e-12);
        assert!(r.w_2inf <= r.w_op + 1e-12 && r.w_op <= r.w_fro + 1e-12);
        let zero = norm_change_report(&w0, &w0, Some((&w0.matmul_nt(&w0).unwrap(), &w0.matmul_nt(&w0).unwrap())), None).unwrap();
        assert_eq!(zero.w_fro, 0.0);
        assert_eq!(zero.ck_fro, Some(0.0));
    }

    #[test]
    fn mp_cdf_is_a_distribution() {
        for ratio in [0.25, 0.667, 1.0, 2.0] {
            let mp = MarchenkoPastur::new(ratio, 1.0).unwrap();
            let (a, b) = mp.support();
            assert!((mp.cdf(b) - 1.0).abs() < 1e-12);
            assert!((mp.cdf(b - 1e-12) - 1.0).abs() < 1e-5, "ratio {ratio}");
            let mid = mp.cdf(0.5 * (a + b));
            assert!(mid > 0.0 && mid < 1.0);
        }
    }
}
