//! Gaussian expectations by quadrature.
//!
//! Nodes and weights come from the Golub–Welsch construction: the eigenvalues
//! of the Jacobi matrix of the orthogonal-polynomial recurrence are the nodes,
//! and the squared first components of its eigenvectors the weights.

use std::sync::OnceLock;

use crate::linalg::sym_tridiagonal_eig;

/// Node count used for activation moments.
pub const MOMENT_NODES: usize = 64;
/// Node count used for Hermite coefficients.
pub const HERMITE_NODES: usize = 128;

const SPLIT_HALF_WIDTH: f64 = 12.0;
const SPLIT_PANELS: usize = 48;
const SPLIT_ORDER: usize = 20;

/// Quadrature rule for `E[f(z)]`, `z ~ N(0,1)`.
#[derive(Debug, Clone)]
pub struct GaussianRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussianRule {
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Probabilists' Gauss–Hermite rule with `n` nodes, weights summing to one.
pub fn gauss_hermite(n: usize) -> GaussianRule {
    let diag = vec![0.0; n];
    let off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    let eig = sym_tridiagonal_eig(&diag, &off).expect("Jacobi matrix is well formed");
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|j| (eig.eigenvalues[j], eig.eigenvectors.get(0, j).powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    GaussianRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1 / total).collect(),
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let diag = vec![0.0; n];
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    let eig = sym_tridiagonal_eig(&diag, &off).expect("Jacobi matrix is well formed");
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|j| (eig.eigenvalues[j], 2.0 * eig.eigenvectors.get(0, j).powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    (pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
}

/// Composite Gauss–Legendre against the Gaussian density with a panel break
/// at zero, for integrands with a kink or jump there.
pub fn split_gaussian_rule() -> GaussianRule {
    let (gx, gw) = gauss_legendre(SPLIT_ORDER);
    let width = SPLIT_HALF_WIDTH / SPLIT_PANELS as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for p in 0..2 * SPLIT_PANELS {
        let a = -SPLIT_HALF_WIDTH + p as f64 * width;
        for (&x, &w) in gx.iter().zip(&gw) {
            let z = a + 0.5 * width * (x + 1.0);
            nodes.push(z);
            weights.push(0.5 * width * w * norm * (-0.5 * z * z).exp());
        }
    }
    GaussianRule { nodes, weights }
}

pub(crate) fn moment_rule() -> &'static GaussianRule {
    static RULE: OnceLock<GaussianRule> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(MOMENT_NODES))
}

pub(crate) fn hermite_rule() -> &'static GaussianRule {
    static RULE: OnceLock<GaussianRule> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(HERMITE_NODES))
}

pub(crate) fn split_rule() -> &'static GaussianRule {
    static RULE: OnceLock<GaussianRule> = OnceLock::new();
    RULE.get_or_init(split_gaussian_rule)
}

/// `η_k = E[f(z)·He_k(z)]/√(k!)` for `k = 0..=k_max` under `rule`.
pub fn hermite_coefficients_with(rule: &GaussianRule, f: impl Fn(f64) -> f64, k_max: usize) -> Vec<f64> {
    let mut eta = vec![0.0; k_max + 1];
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let fx = w * f(x);
        // Orthonormal recurrence h_k = He_k/√(k!).
        let mut prev = 0.0;
        let mut cur = 1.0;
        for (k, e) in eta.iter_mut().enumerate() {
            *e += fx * cur;
            let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
            prev = cur;
            cur = next;
        }
    }
    eta
}

/// Hermite coefficients with the 128-node Gauss–Hermite rule.
pub fn hermite_coefficients(f: impl Fn(f64) -> f64, k_max: usize) -> Vec<f64> {
    hermite_coefficients_with(hermite_rule(), f, k_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_rule_moments() {
        let rule = gauss_hermite(64);
        assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(rule.expect(|x| x).abs() < 1e-13);
        assert!((rule.expect(|x| x * x) - 1.0).abs() < 1e-12);
        assert!((rule.expect(|x| x.powi(4)) - 3.0).abs() < 1e-11);
        assert!((rule.expect(|x| x.powi(6)) - 15.0).abs() < 1e-10);
    }

    #[test]
    fn split_rule_moments() {
        let rule = split_gaussian_rule();
        assert!((rule.expect(|_| 1.0) - 1.0).abs() < 1e-13);
        assert!((rule.expect(|x| x.max(0.0)) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-13);
        assert!((rule.expect(|x| x.powi(4)) - 3.0).abs() < 1e-11);
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        let i: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((i - 2.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn coefficients_of_simple_functions() {
        let one = hermite_coefficients(|_| 1.0, 5);
        assert!((one[0] - 1.0).abs() < 1e-12);
        assert!(one[1..].iter().all(|e| e.abs() < 1e-12));
        let lin = hermite_coefficients(|x| 2.0 * x, 5);
        assert!((lin[1] - 2.0).abs() < 1e-12);
        assert!(lin.iter().enumerate().all(|(k, e)| k == 1 || e.abs() < 1e-12));
        // z² = He_2 + 1 and He_2/√2 is orthonormal.
        let sq = hermite_coefficients(|x| x * x, 4);
        assert!((sq[0] - 1.0).abs() < 1e-12);
        assert!((sq[2] - 2f64.sqrt()).abs() < 1e-12);
    }
}
