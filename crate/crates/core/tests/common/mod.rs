//! Reference computations shared by the oracle and acceptance suites.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use spectral_lab::activation::{normalize_activation, BaseActivation};
use spectral_lab::kernels::{ntk_matrix, KernelKind};
use spectral_lab::lazy::{fit_lazy, LazyOptions};
use spectral_lab::linalg::{sym_eig, Matrix};
use spectral_lab::model::{InitKind, ModelState, TrainLayers};
use spectral_lab::spectral::power_law_alpha;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Matrix<f64> {
    let g = gaussian(rng, n, n);
    Matrix::from_fn(n, n, |i, j| 0.5 * (g.get(i, j) + g.get(j, i)))
}

/// Coefficients of `det(λI − A)`, highest degree first, by Faddeev–LeVerrier.
fn char_poly(a: &Matrix<f64>) -> Vec<f64> {
    let n = a.rows();
    let mut coeffs = vec![1.0];
    let mut m = Matrix::zeros(n, n);
    let mut c = 1.0;
    for k in 1..=n {
        let mut next = a.matmul(&m).unwrap();
        for i in 0..n {
            next.set(i, i, next.get(i, i) + c);
        }
        m = next;
        let am = a.matmul(&m).unwrap();
        c = -(0..n).map(|i| am.get(i, i)).sum::<f64>() / k as f64;
        coeffs.push(c);
    }
    coeffs
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().fold(0.0, |acc, &c| acc * x + c)
}

/// Real roots by sign changes on a fine grid, refined with bisection.
fn real_roots(coeffs: &[f64], bound: f64) -> Vec<f64> {
    let steps = 200_000;
    let mut roots = Vec::new();
    let mut x0 = -bound;
    let mut p0 = horner(coeffs, x0);
    for k in 1..=steps {
        let x1 = -bound + 2.0 * bound * k as f64 / steps as f64;
        let p1 = horner(coeffs, x1);
        if p0 == 0.0 {
            roots.push(x0);
        } else if p0 * p1 < 0.0 {
            let (mut lo, mut hi) = (x0, x1);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if horner(coeffs, lo) * horner(coeffs, mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        x0 = x1;
        p0 = p1;
    }
    roots
}

/// Largest gap between `sym_eig` and the characteristic-polynomial roots over
/// `trials` random symmetric matrices of order 1 to 4.
pub fn char_poly_max_error(seed: u64, trials: usize) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let n = 1 + trial % 4;
        let a = random_symmetric(&mut rng, n);
        let bound = (0..n)
            .map(|i| (0..n).map(|j| a.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
            + 1.0;
        let want = real_roots(&char_poly(&a), bound);
        if want.len() != n {
            return f64::INFINITY;
        }
        let mut got = sym_eig(&a).unwrap().eigenvalues;
        got.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            worst = worst.max((g - w).abs());
        }
    }
    worst
}

pub fn tiny_model(rng: &mut ChaCha8Rng, base: BaseActivation, h: usize, d: usize) -> ModelState<f64> {
    ModelState {
        w: gaussian(rng, h, d),
        v: normal_vec(rng, h),
        activation: normalize_activation(base).unwrap(),
        init: InitKind::Gaussian,
    }
}

fn loss(model: &ModelState<f64>, x: &Matrix<f64>, y: &[f64]) -> f64 {
    let f = model.forward(x).unwrap();
    y.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (2.0 * y.len() as f64)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale
}

const FD_EPS: f64 = 1e-6;

/// Central differences of `g` at every entry of `w` and `v`.
fn perturb_all<R>(model: &ModelState<f64>, g: impl Fn(&ModelState<f64>) -> R, diff: impl Fn(R, R) -> R) -> (Vec<R>, Vec<R>) {
    let mut dw = Vec::new();
    for k in 0..model.w.as_slice().len() {
        let mut p = model.clone();
        p.w.as_mut_slice()[k] += FD_EPS;
        let mut m = model.clone();
        m.w.as_mut_slice()[k] -= FD_EPS;
        dw.push(diff(g(&p), g(&m)));
    }
    let mut dv = Vec::new();
    for k in 0..model.v.len() {
        let mut p = model.clone();
        p.v[k] += FD_EPS;
        let mut m = model.clone();
        m.v[k] -= FD_EPS;
        dv.push(diff(g(&p), g(&m)));
    }
    (dw, dv)
}

/// Worst relative error of the descent gradient against `−∂L` by central
/// differences, over smooth activations.
pub fn gradient_fd_error(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for base in [BaseActivation::Tanh, BaseActivation::Softplus, BaseActivation::Sigmoid] {
        let (h, d, n) = (7, 5, 9);
        let model = tiny_model(&mut rng, base, h, d);
        let x = gaussian(&mut rng, d, n);
        let y = normal_vec(&mut rng, n);
        let g = model.grad(&x, &y, TrainLayers::Both).unwrap();
        let (fd_w, fd_v) = perturb_all(&model, |m| loss(m, &x, &y), |p, m| -(p - m) / (2.0 * FD_EPS));
        worst = worst
            .max(rel_err(g.w.as_slice(), &fd_w))
            .max(rel_err(g.v.as_deref().unwrap(), &fd_v));
    }
    worst
}

/// Relative error of the first-layer and full NTK against the Gram matrix of
/// a finite-difference Jacobian.
pub fn ntk_fd_error(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let (h, d, n) = (6, 4, 5);
    let model = tiny_model(&mut rng, BaseActivation::Tanh, h, d);
    let x = gaussian(&mut rng, d, n);
    let (jac_w, jac_v) = perturb_all(
        &model,
        |m| m.forward(&x).unwrap(),
        |p, m| p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * FD_EPS)).collect(),
    );
    let gram = |cols: &[Vec<f64>]| -> Vec<f64> {
        let mut g = vec![0.0; n * n];
        for c in cols {
            for i in 0..n {
                for j in 0..n {
                    g[i * n + j] += c[i] * c[j];
                }
            }
        }
        g
    };
    let first = gram(&jac_w);
    let both: Vec<f64> = first.iter().zip(gram(&jac_v)).map(|(a, b)| a + b).collect();
    let k_first = ntk_matrix(&model, &x, KernelKind::NtkFirstLayer).unwrap();
    let k_both = ntk_matrix(&model, &x, KernelKind::Ntk).unwrap();
    rel_err(k_first.k.as_slice(), &first).max(rel_err(k_both.k.as_slice(), &both))
}

/// `‖ŷ − y‖/‖y‖` of the lazy predictor on its own training inputs.
pub fn lazy_interpolation_residual(seed: u64) -> f64 {
    let mut rng = rng(seed);
    let (h, d, n) = (30, 20, 40);
    let model = tiny_model(&mut rng, BaseActivation::Tanh, h, d);
    let x = gaussian(&mut rng, d, n);
    let y = normal_vec(&mut rng, n);
    let p = fit_lazy(&model, &x, &y, LazyOptions::default()).unwrap();
    let pred = p.predict(&x).unwrap();
    rel_err(&pred, &y)
}

/// Relative error of the fitted exponent on `samples` Pareto draws with density
/// exponent `alpha`, and the fit's KS distance.
pub fn pareto_fit(alpha: f64, samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = rng(seed);
    let xs: Vec<f64> = (0..samples)
        .map(|_| {
            let u: f64 = rng.random();
            (1.0 - u).powf(-1.0 / (alpha - 1.0))
        })
        .collect();
    let fit = power_law_alpha(&xs, 0.1).unwrap();
    ((fit.alpha / alpha - 1.0).abs(), fit.ks_distance)
}
