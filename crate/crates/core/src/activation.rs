//! Activations centered to zero mean under a standard Gaussian input and, by
//! default, scaled to unit second moment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{hermite_coefficients_with, hermite_rule, moment_rule, split_rule, GaussianRule};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseActivation {
    Tanh,
    Softplus,
    Relu,
    Sigmoid,
    Linear,
}

impl BaseActivation {
    pub const ALL: [BaseActivation; 5] = [
        BaseActivation::Tanh,
        BaseActivation::Softplus,
        BaseActivation::Relu,
        BaseActivation::Sigmoid,
        BaseActivation::Linear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaseActivation::Tanh => "tanh",
            BaseActivation::Softplus => "softplus",
            BaseActivation::Relu => "relu",
            BaseActivation::Sigmoid => "sigmoid",
            BaseActivation::Linear => "linear",
        }
    }

    pub fn eval<T: Scalar>(self, x: T) -> T {
        match self {
            BaseActivation::Tanh => x.tanh(),
            BaseActivation::Softplus => x.max(T::zero()) + (-x.abs()).exp().ln_1p(),
            BaseActivation::Relu => x.max(T::zero()),
            BaseActivation::Sigmoid => logistic(x),
            BaseActivation::Linear => x,
        }
    }

    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            BaseActivation::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
            BaseActivation::Softplus => logistic(x),
            BaseActivation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            BaseActivation::Sigmoid => {
                let s = logistic(x);
                s * (T::one() - s)
            }
            BaseActivation::Linear => T::one(),
        }
    }

    /// `max(sup|f'|, sup|f''|)` over the real line (relu's second derivative
    /// is zero almost everywhere and is treated as such).
    pub fn derivative_bound(self) -> f64 {
        match self {
            BaseActivation::Tanh => 1.0f64.max(4.0 / (3.0 * 3f64.sqrt())),
            BaseActivation::Softplus => 1.0,
            BaseActivation::Relu => 1.0,
            BaseActivation::Sigmoid => 0.25f64.max(1.0 / (6.0 * 3f64.sqrt())),
            BaseActivation::Linear => 1.0,
        }
    }

    pub fn is_odd(self) -> bool {
        matches!(self, BaseActivation::Tanh | BaseActivation::Linear)
    }

    fn is_smooth(self) -> bool {
        !matches!(self, BaseActivation::Relu)
    }
}

fn logistic<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl fmt::Display for BaseActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaseActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaseActivation::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown activation `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Zero mean and unit second moment.
    #[default]
    UnitVariance,
    /// Zero mean only.
    Centered,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::UnitVariance => "unit-variance",
            Normalization::Centered => "centered",
        }
    }
}

/// `σ(x) = (base(x) − shift)/scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec {
    pub base: BaseActivation,
    pub shift: f64,
    pub scale: f64,
    pub normalization: Normalization,
}

impl ActivationSpec {
    pub fn eval<T: Scalar>(&self, x: T) -> T {
        (self.base.eval(x) - T::c(self.shift)) / T::c(self.scale)
    }

    pub fn derivative<T: Scalar>(&self, x: T) -> T {
        self.base.derivative(x) / T::c(self.scale)
    }

    /// `λ_σ` with `|σ'|, |σ''| ≤ λ_σ`.
    pub fn lipschitz(&self) -> f64 {
        self.base.derivative_bound() / self.scale
    }

    /// Rule appropriate for Gaussian moments of this activation.
    fn rule(&self, hermite: bool) -> &'static GaussianRule {
        if !self.base.is_smooth() {
            split_rule()
        } else if hermite {
            hermite_rule()
        } else {
            moment_rule()
        }
    }

    /// `E[σ(z)]` and `E[σ(z)²]`.
    pub fn gaussian_moments(&self) -> (f64, f64) {
        let rule = self.rule(false);
        (
            rule.expect(|x| self.eval(x)),
            rule.expect(|x| self.eval(x).powi(2)),
        )
    }

    /// Hermite coefficients of `σ'`.
    pub fn derivative_hermite(&self, k_max: usize) -> Vec<f64> {
        hermite_coefficients_with(self.rule(true), |x| self.derivative(x), k_max)
    }
}

/// Centers and scales `base` by its Gaussian mean and standard deviation.
pub fn normalize_activation(base: BaseActivation) -> Result<ActivationSpec> {
    normalize_activation_with(base, Normalization::UnitVariance)
}

pub fn normalize_activation_with(base: BaseActivation, normalization: Normalization) -> Result<ActivationSpec> {
    let rule = if base.is_smooth() { moment_rule() } else { split_rule() };
    let mean = if base.is_odd() {
        0.0
    } else {
        rule.expect(|x| base.eval(x))
    };
    let var = rule.expect(|x| (base.eval::<f64>(x) - mean).powi(2));
    let scale = var.max(0.0).sqrt();
    if scale < 1e-10 {
        return Err(Error::DegenerateActivation(base.name().into()));
    }
    Ok(ActivationSpec {
        base,
        shift: mean,
        scale: match normalization {
            Normalization::UnitVariance => scale,
            Normalization::Centered => 1.0,
        },
        normalization,
    })
}

/// Asymptotic floor of the smallest initial NTK eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NtkFloor {
    /// `E[σ'(ξ)²]`.
    pub a_sigma: f64,
    /// Hermite coefficients `η_0, η_1, η_2` of `σ'`.
    pub eta: [f64; 3],
    /// `a_σ − Σ_{k≤2} η_k²`.
    pub bound: f64,
    /// `√bound / 2`, so that the floor reads `λ_min ≥ 4α²`.
    pub alpha: f64,
}

pub fn ntk_min_eig_bound(activation: &ActivationSpec) -> Result<NtkFloor> {
    let rule = activation.rule(true);
    let a_sigma = rule.expect(|x| activation.derivative(x).powi(2));
    let eta = activation.derivative_hermite(2);
    let raw = a_sigma - eta.iter().map(|e| e * e).sum::<f64>();
    if raw < -1e-8 {
        return Err(Error::NumericalInconsistency(format!(
            "negative NTK floor {raw:e} for {}",
            activation.base
        )));
    }
    let bound = raw.max(0.0);
    Ok(NtkFloor {
        a_sigma,
        eta: [eta[0], eta[1], eta[2]],
        bound,
        alpha: bound.sqrt() / 2.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn centered_convention_keeps_scale() {
        for base in BaseActivation::ALL {
            let unit = normalize_activation(base).unwrap();
            let c = normalize_activation_with(base, Normalization::Centered).unwrap();
            assert_eq!(c.scale, 1.0);
            assert_eq!(c.shift, unit.shift);
            let (m1, m2) = c.gaussian_moments();
            assert!(m1.abs() <= 1e-8);
            assert!((m2 - unit.scale * unit.scale).abs() <= 1e-6 * m2.max(1.0), "{base}");
        }
    }

    #[test]
    fn every_activation_is_normalized() {
        for base in BaseActivation::ALL {
            let spec = normalize_activation(base).unwrap();
            let (m1, m2) = spec.gaussian_moments();
            assert!(m1.abs() <= 1e-8, "{base}: mean {m1}");
            assert!((m2 - 1.0).abs() <= 1e-6, "{base}: second moment {m2}");
        }
    }

    #[test]
    fn closed_forms() {
        let lin = normalize_activation(BaseActivation::Linear).unwrap();
        assert!(lin.shift.abs() < 1e-14 && (lin.scale - 1.0).abs() < 1e-12);
        let relu = normalize_activation(BaseActivation::Relu).unwrap();
        assert!((relu.shift - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-12);
        assert!((relu.scale - (0.5 - 1.0 / (2.0 * PI)).sqrt()).abs() < 1e-12);
        let tanh = normalize_activation(BaseActivation::Tanh).unwrap();
        assert_eq!(tanh.shift, 0.0);
    }

    #[test]
    fn ntk_floor_signs() {
        let lin = normalize_activation(BaseActivation::Linear).unwrap();
        assert!(ntk_min_eig_bound(&lin).unwrap().bound.abs() < 1e-10);
        let tanh = normalize_activation(BaseActivation::Tanh).unwrap();
        assert!(ntk_min_eig_bound(&tanh).unwrap().bound > 0.0);
        let relu = normalize_activation(BaseActivation::Relu).unwrap();
        let floor = ntk_min_eig_bound(&relu).unwrap();
        let s2 = relu.scale * relu.scale;
        assert!((floor.bound - (0.25 - 1.0 / (2.0 * PI)) / s2).abs() < 1e-10);
        assert!(floor.eta[2].abs() < 1e-12);
    }

    #[test]
    fn stable_softplus_and_sigmoid() {
        let b = BaseActivation::Softplus;
        assert_eq!(b.eval(800.0f64), 800.0);
        assert!(b.eval(-800.0f64) >= 0.0);
        assert!((BaseActivation::Sigmoid.eval(-800.0f64)).abs() < 1e-300);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for base in BaseActivation::ALL {
            for &x in &[-2.3f64, -0.7, 0.4, 1.9] {
                let h = 1e-6;
                let fd = (base.eval(x + h) - base.eval(x - h)) / (2.0 * h);
                assert!((fd - base.derivative(x)).abs() < 1e-8, "{base} at {x}");
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("tanh".parse::<BaseActivation>().unwrap(), BaseActivation::Tanh);
        assert!("gelu".parse::<BaseActivation>().is_err());
    }
}
