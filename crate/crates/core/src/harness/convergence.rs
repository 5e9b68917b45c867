use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::{parallel_map, setup_with_test};
use crate::activation::ntk_min_eig_bound;
use crate::error::Result;
use crate::model::{InitKind, TrainLayers};
use crate::optim::{OptimizerKind, OptimizerSpec};
use crate::scalar::Scalar;
use crate::train::{train_with_hook, MetricLevel, TrainConfig};
use crate::with_precision;

/// Floors below this count as a vanishing `α`.
const ALPHA_FLOOR_EPS: f64 = 1e-10;
/// Relative slack absorbing floating-point roundoff in the bound comparisons.
const ROUNDOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Passed,
    Violated,
    PreconditionUnmet,
}

/// Smallest relative slack `(limit − value)/ℓ₀` over all steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundMargins {
    /// `ℓ_t ≤ (1 − ηα²/(2n))^t ℓ₀`.
    pub decay: f64,
    /// `(α/4)‖W₀ − W_t‖_F + ℓ_t ≤ ℓ₀`.
    pub energy: f64,
    /// `Σ_s ‖W_{s+1} − W_s‖_F ≤ 4ℓ₀/α`.
    pub path: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub step: usize,
    pub bound: String,
    pub value: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrial {
    pub seed: u64,
    pub status: CheckStatus,
    pub steps: usize,
    pub hit_cap: bool,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub margins: BoundMargins,
    pub first_violation: Option<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub config: ExperimentConfig,
    pub status: CheckStatus,
    pub reason: Option<String>,
    pub alpha: f64,
    pub lipschitz: f64,
    pub learning_rate: f64,
    /// `min{α²n/2, n/(4λ_σ²(1+√γ₁)²)}`.
    pub max_learning_rate: f64,
    pub trials: Vec<ConvergenceTrial>,
}

/// Largest step size admitted by the global-convergence guarantee, with its `α`
/// and the activation's Lipschitz constant.
pub fn admissible_learning_rate(cfg: &ExperimentConfig) -> Result<(f64, f64, f64)> {
    let act = cfg.activation_spec()?;
    let floor = ntk_min_eig_bound(&act)?;
    let alpha = if floor.bound < ALPHA_FLOOR_EPS { 0.0 } else { floor.alpha };
    let lip = act.lipschitz();
    let n = cfg.n as f64;
    let gamma1 = n / cfg.d as f64;
    let max = (alpha * alpha * n / 2.0).min(n / (4.0 * lip * lip * (1.0 + gamma1.sqrt()).powi(2)));
    Ok((max, alpha, lip))
}

fn check_trial<T: Scalar>(cfg: &ExperimentConfig, seed: u64, lr: f64, alpha: f64) -> Result<ConvergenceTrial> {
    let s = setup_with_test::<T>(cfg, seed, 1)?;
    let tcfg = TrainConfig {
        optimizer: OptimizerSpec::gd(lr),
        epochs: cfg.convergence.epoch_cap,
        stop_loss: cfg.stop_loss,
        train_layers: TrainLayers::FirstOnly,
        record_every: 1,
        seed,
        metrics: MetricLevel::Loss,
    };
    let w0 = s.model.w.clone();
    let mut distances = Vec::new();
    let out = train_with_hook(s.model, &s.train, None, &tcfg, &mut |snap| {
        let d: f64 = w0
            .as_slice()
            .iter()
            .zip(snap.model.w.as_slice())
            .map(|(&a, &b)| (b - a).to_f64_lossy().powi(2))
            .sum();
        distances.push(d.sqrt());
        Ok(())
    })?;
    let rows = &out.trace.rows;
    let ell0 = rows[0].residual_norm;
    let rate = 1.0 - lr * alpha * alpha / (2.0 * cfg.n as f64);
    let path_limit = 4.0 * ell0 / alpha;
    let tol = ROUNDOFF * ell0.max(1.0);
    let mut margins = BoundMargins {
        decay: f64::INFINITY,
        energy: f64::INFINITY,
        path: f64::INFINITY,
    };
    let mut first_violation = None;
    for (row, &dist) in rows.iter().zip(&distances) {
        let t = row.epoch;
        let checks = [
            ("decay", row.residual_norm, rate.powi(t as i32) * ell0),
            ("energy", alpha / 4.0 * dist + row.residual_norm, ell0),
            ("path", row.path_length, path_limit),
        ];
        for (name, value, limit) in checks {
            let slack = (limit - value) / ell0;
            let m = match name {
                "decay" => &mut margins.decay,
                "energy" => &mut margins.energy,
                _ => &mut margins.path,
            };
            *m = m.min(slack);
            if value > limit + tol && first_violation.is_none() {
                first_violation = Some(Violation {
                    step: t,
                    bound: name.into(),
                    value,
                    limit,
                });
            }
        }
    }
    Ok(ConvergenceTrial {
        seed,
        status: if first_violation.is_some() {
            CheckStatus::Violated
        } else {
            CheckStatus::Passed
        },
        steps: out.trace.epochs_run,
        hit_cap: out.trace.hit_cap(),
        initial_residual: ell0,
        final_residual: out.trace.last().residual_norm,
        margins,
        first_violation,
    })
}

fn convergence_impl<T: Scalar>(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let (max_lr, alpha, lipschitz) = admissible_learning_rate(cfg)?;
    let lr = match cfg.convergence.eta_fraction {
        Some(f) => f * max_lr,
        None => cfg.optimizer.learning_rate,
    };
    let mut report = ConvergenceReport {
        config: cfg.clone(),
        status: CheckStatus::PreconditionUnmet,
        reason: None,
        alpha,
        lipschitz,
        learning_rate: lr,
        max_learning_rate: max_lr,
        trials: Vec::new(),
    };
    let unmet = if cfg.train_layers != TrainLayers::FirstOnly {
        Some("train_layers must be first-only".to_string())
    } else if cfg.init != InitKind::BoundedV {
        Some("init must be bounded-v".to_string())
    } else if cfg.optimizer.kind != OptimizerKind::Gd && cfg.convergence.eta_fraction.is_none() {
        Some("optimizer must be gd".to_string())
    } else if alpha == 0.0 {
        Some(format!("activation {} has a vanishing NTK floor (α = 0)", cfg.activation))
    } else if !(lr < max_lr) {
        Some(format!("learning rate {lr} is not below the admissible maximum {max_lr}"))
    } else {
        None
    };
    if unmet.is_some() {
        report.reason = unmet;
        return Ok(report);
    }
    let seeds: Vec<u64> = (0..cfg.trials).map(|i| cfg.trial_seed(i)).collect();
    report.trials = parallel_map(&seeds, |&seed| check_trial::<T>(cfg, seed, lr, alpha))?;
    report.status = if report.trials.iter().all(|t| t.status == CheckStatus::Passed) {
        CheckStatus::Passed
    } else {
        CheckStatus::Violated
    };
    Ok(report)
}

/// Checks the geometric loss decay, the energy inequality and the path-length
/// bound of first-layer GD at every step, for each trial seed.
pub fn convergence_check(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    with_precision!(cfg, convergence_impl(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::BaseActivation;
    use crate::harness::config::tiny;

    fn first_layer() -> ExperimentConfig {
        ExperimentConfig {
            init: InitKind::BoundedV,
            train_layers: TrainLayers::FirstOnly,
            h: 120,
            convergence: crate::harness::ConvergenceConfig {
                eta_fraction: Some(0.9),
                epoch_cap: 200,
            },
            ..tiny()
        }
    }

    #[test]
    fn admissible_rate_matches_closed_form() {
        let cfg = first_layer();
        let (max, alpha, lip) = admissible_learning_rate(&cfg).unwrap();
        let n = cfg.n as f64;
        let g = n / cfg.d as f64;
        let want = (alpha * alpha * n / 2.0).min(n / (4.0 * lip * lip * (1.0 + g.sqrt()).powi(2)));
        assert!((max - want).abs() < 1e-15 && alpha > 0.1);
    }

    #[test]
    fn bounds_hold_on_tiny_instance() {
        let r = convergence_check(&first_layer()).unwrap();
        assert_eq!(r.status, CheckStatus::Passed, "{:?}", r.trials);
        assert!(r.learning_rate < r.max_learning_rate);
        for t in &r.trials {
            assert!(t.final_residual < t.initial_residual);
            assert!(t.margins.decay >= 0.0 && t.margins.energy >= 0.0 && t.margins.path >= 0.0);
        }
    }

    #[test]
    fn preconditions() {
        let lin = ExperimentConfig {
            activation: BaseActivation::Linear,
            ..first_layer()
        };
        let r = convergence_check(&lin).unwrap();
        assert_eq!(r.status, CheckStatus::PreconditionUnmet);
        assert!(r.trials.is_empty());
        let mut big = first_layer();
        big.convergence.eta_fraction = Some(1.5);
        assert_eq!(convergence_check(&big).unwrap().status, CheckStatus::PreconditionUnmet);
        let both = ExperimentConfig {
            train_layers: TrainLayers::Both,
            ..first_layer()
        };
        assert_eq!(convergence_check(&both).unwrap().status, CheckStatus::PreconditionUnmet);
    }
}
