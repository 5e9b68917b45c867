use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ScalingMode};
use super::convergence::admissible_learning_rate;
use super::{parallel_map, setup_with_test, MeanSd};
use crate::error::{Error, Result};
use crate::optim::OptimizerSpec;
use crate::scalar::Scalar;
use crate::train::{train, MetricLevel, TrainConfig};
use crate::with_precision;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalingQuantities<V> {
    /// `‖W_t − W₀‖_F`.
    pub w_fro: V,
    /// `‖W_t − W₀‖_F/√d`.
    pub w_fro_scaled: V,
    pub w_op_scaled: V,
    pub w_2inf_scaled: V,
    pub ck_fro: V,
    pub ck_op: V,
    pub ntk_fro: V,
    pub ntk_op: V,
}

impl<V> ScalingQuantities<V> {
    pub fn map<U>(&self, mut f: impl FnMut(&V) -> U) -> ScalingQuantities<U> {
        ScalingQuantities {
            w_fro: f(&self.w_fro),
            w_fro_scaled: f(&self.w_fro_scaled),
            w_op_scaled: f(&self.w_op_scaled),
            w_2inf_scaled: f(&self.w_2inf_scaled),
            ck_fro: f(&self.ck_fro),
            ck_op: f(&self.ck_op),
            ntk_fro: f(&self.ntk_fro),
            ntk_op: f(&self.ntk_op),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub d: usize,
    pub h: usize,
    pub learning_rate: f64,
    pub trials: usize,
    pub epochs: MeanSd,
    pub capped_trials: usize,
    pub test_mse: Option<MeanSd>,
    pub values: ScalingQuantities<MeanSd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub config: ExperimentConfig,
    pub mode: ScalingMode,
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `ln(mean)` against `ln n`.
    pub slopes: ScalingQuantities<Option<f64>>,
    /// `(max − min)/mean` of the per-`n` means.
    pub relative_spread: ScalingQuantities<Option<f64>>,
}

/// Least-squares slope of `ln y` against `ln x`; `None` unless all values are positive.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|&v| !(v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn relative_spread(y: &[f64]) -> Option<f64> {
    if y.is_empty() || y.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    (mean > 0.0).then(|| (max - min) / mean)
}

struct TrialOutcome {
    values: ScalingQuantities<f64>,
    epochs: usize,
    hit_cap: bool,
    test_mse: Option<f64>,
}

fn learning_rate(cfg: &ExperimentConfig) -> Result<f64> {
    match cfg.scaling.eta_fraction {
        Some(f) => Ok(f * admissible_learning_rate(cfg)?.0),
        None => Ok(cfg.optimizer.learning_rate),
    }
}

fn scaling_trial<T: Scalar>(cfg: &ExperimentConfig, seed: u64) -> Result<TrialOutcome> {
    let early = cfg.scaling.mode == ScalingMode::EarlyPhase;
    let s = setup_with_test::<T>(cfg, seed, if early { 1 } else { cfg.test_size })?;
    let epochs = if early { cfg.scaling.steps } else { cfg.scaling.epoch_cap };
    let tcfg = TrainConfig {
        optimizer: OptimizerSpec::gd(learning_rate(cfg)?),
        epochs,
        stop_loss: if early { 0.0 } else { cfg.stop_loss },
        train_layers: cfg.train_layers,
        record_every: epochs.max(1),
        seed,
        metrics: MetricLevel::Kernels,
    };
    let out = train(s.model, &s.train, (!early).then_some(&s.test), &tcfg)?;
    let r = out.trace.last();
    let sd = (cfg.d as f64).sqrt();
    let get = |v: Option<f64>| v.ok_or_else(|| Error::Degenerate("missing norm-change column".into()));
    Ok(TrialOutcome {
        values: ScalingQuantities {
            w_fro: get(r.w_fro)? * sd,
            w_fro_scaled: get(r.w_fro)?,
            w_op_scaled: get(r.w_op)?,
            w_2inf_scaled: get(r.w_2inf)?,
            ck_fro: get(r.ck_fro)?,
            ck_op: get(r.ck_op)?,
            ntk_fro: get(r.ntk_fro)?,
            ntk_op: get(r.ntk_op)?,
        },
        epochs: out.trace.epochs_run,
        hit_cap: !early && out.trace.hit_cap(),
        test_mse: r.test_mse,
    })
}

fn scaling_impl<T: Scalar>(cfg: &ExperimentConfig) -> Result<ScalingResult> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &n in &cfg.scaling.n_list {
        let sub = cfg.scaled_to(n)?;
        let seeds: Vec<u64> = (0..cfg.trials).map(|i| cfg.trial_seed(i)).collect();
        let outcomes = parallel_map(&seeds, |&seed| scaling_trial::<T>(&sub, seed))?;
        let column = |f: &dyn Fn(&ScalingQuantities<f64>) -> f64| {
            MeanSd::of(&outcomes.iter().map(|o| f(&o.values)).collect::<Vec<_>>())
        };
        let values = ScalingQuantities {
            w_fro: column(&|q| q.w_fro),
            w_fro_scaled: column(&|q| q.w_fro_scaled),
            w_op_scaled: column(&|q| q.w_op_scaled),
            w_2inf_scaled: column(&|q| q.w_2inf_scaled),
            ck_fro: column(&|q| q.ck_fro),
            ck_op: column(&|q| q.ck_op),
            ntk_fro: column(&|q| q.ntk_fro),
            ntk_op: column(&|q| q.ntk_op),
        };
        let tests: Option<Vec<f64>> = outcomes.iter().map(|o| o.test_mse).collect();
        rows.push(ScalingRow {
            n,
            d: sub.d,
            h: sub.h,
            learning_rate: learning_rate(&sub)?,
            trials: outcomes.len(),
            epochs: MeanSd::of(&outcomes.iter().map(|o| o.epochs as f64).collect::<Vec<_>>()),
            capped_trials: outcomes.iter().filter(|o| o.hit_cap).count(),
            test_mse: tests.map(|t| MeanSd::of(&t)),
            values,
        });
    }
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let means = |f: &dyn Fn(&ScalingQuantities<MeanSd>) -> f64| -> Vec<f64> {
        rows.iter().map(|r| f(&r.values)).collect()
    };
    let per_quantity: ScalingQuantities<Vec<f64>> = ScalingQuantities {
        w_fro: means(&|q| q.w_fro.mean),
        w_fro_scaled: means(&|q| q.w_fro_scaled.mean),
        w_op_scaled: means(&|q| q.w_op_scaled.mean),
        w_2inf_scaled: means(&|q| q.w_2inf_scaled.mean),
        ck_fro: means(&|q| q.ck_fro.mean),
        ck_op: means(&|q| q.ck_op.mean),
        ntk_fro: means(&|q| q.ntk_fro.mean),
        ntk_op: means(&|q| q.ntk_op.mean),
    };
    Ok(ScalingResult {
        config: cfg.clone(),
        mode: cfg.scaling.mode,
        slopes: per_quantity.map(|y| log_log_slope(&ns, y)),
        relative_spread: per_quantity.map(|y| relative_spread(y)),
        rows,
    })
}

/// Norm changes of weights and kernels across `cfg.scaling.n_list` at fixed
/// ratios, either after a fixed number of full-batch steps or at convergence.
pub fn scaling_study(cfg: &ExperimentConfig) -> Result<ScalingResult> {
    with_precision!(cfg, scaling_impl(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let x = [10.0, 20.0, 40.0, 80.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((log_log_slope(&x, &y).unwrap() + 0.5).abs() < 1e-12);
        assert!(log_log_slope(&x, &[1.0, 0.0, 1.0, 1.0]).is_none());
        assert!((relative_spread(&[1.0, 1.2, 0.8]).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn early_phase_rows() {
        let mut cfg = crate::harness::config::tiny();
        cfg.scaling.n_list = vec![50, 80];
        cfg.optimizer = crate::optim::OptimizerSpec::gd(1.0);
        let r = scaling_study(&cfg).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!((r.rows[0].d, r.rows[0].h), (30, 60));
        assert!(r.rows.iter().all(|row| row.epochs.mean == 3.0));
        assert!(r.slopes.w_fro.is_some());
        assert!(r.rows[0].values.ck_op.mean > 0.0);
    }
}
