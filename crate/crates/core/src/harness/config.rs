//! Declarative experiment configuration with `--set key=value` style overrides.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::activation::{normalize_activation_with, ActivationSpec, BaseActivation, Normalization};
use crate::data::{TeacherConfig, TeacherKind};
use crate::error::{Error, Result};
use crate::lazy::LazyOptions;
use crate::model::{InitKind, TrainLayers};
use crate::optim::OptimizerSpec;
use crate::spectral::SpectralOptions;
use crate::train::{MetricLevel, TrainConfig};

pub const SWEEP_EPOCH_CAP: usize = 5_000;
pub const CONVERGENCE_EPOCH_CAP: usize = 20_000;
pub const DEFAULT_TEST_SIZE: usize = 10_000;
pub const DEFAULT_TRIALS: usize = 5;
pub const DEFAULT_SCALING_GRID: [usize; 5] = [1000, 1600, 2560, 4096, 6400];
const RATIO_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub learning_rates: Vec<f64>,
    pub epoch_cap: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 15.0, 22.0],
            epoch_cap: SWEEP_EPOCH_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingMode {
    EarlyPhase,
    AtConvergence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    pub n_list: Vec<usize>,
    /// `n/d`.
    pub gamma1: f64,
    /// `h/d`.
    pub gamma2: f64,
    pub mode: ScalingMode,
    /// Full-batch steps in early-phase mode.
    pub steps: usize,
    pub epoch_cap: usize,
    /// When set, each grid point trains at this fraction of its admissible
    /// learning rate, which grows linearly in `n`; otherwise at
    /// `optimizer.learning_rate`.
    pub eta_fraction: Option<f64>,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            n_list: DEFAULT_SCALING_GRID.to_vec(),
            gamma1: 5.0 / 3.0,
            gamma2: 2.0,
            mode: ScalingMode::EarlyPhase,
            steps: 3,
            epoch_cap: CONVERGENCE_EPOCH_CAP,
            eta_fraction: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// When set, `η` is this fraction of the admissible maximum instead of
    /// `optimizer.learning_rate`.
    pub eta_fraction: Option<f64>,
    pub epoch_cap: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            eta_fraction: None,
            epoch_cap: CONVERGENCE_EPOCH_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub h: usize,
    pub activation: BaseActivation,
    /// Convention for the network activation; the teacher target is always
    /// unit-variance.
    pub activation_normalization: Normalization,
    pub init: InitKind,
    pub teacher: TeacherConfig,
    /// Label noise `σ_ε` on training labels.
    pub noise_sigma: f64,
    pub test_size: usize,
    /// Whether test labels carry the same label noise.
    pub test_noise: bool,
    pub optimizer: OptimizerSpec,
    pub train_layers: TrainLayers,
    pub epochs: usize,
    pub stop_loss: f64,
    pub record_every: usize,
    pub metrics: MetricLevel,
    pub trials: usize,
    /// Trial `i` uses seed `seed + i`.
    pub seed: u64,
    pub precision: Precision,
    pub spectral: SpectralOptions,
    pub lazy: LazyOptions,
    pub sweep: SweepConfig,
    pub scaling: ScalingConfig,
    pub convergence: ConvergenceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "case1".into(),
            n: 2000,
            d: 1000,
            h: 1500,
            activation: BaseActivation::Tanh,
            activation_normalization: Normalization::UnitVariance,
            init: InitKind::Gaussian,
            teacher: TeacherConfig {
                kind: TeacherKind::Mixed,
                target: BaseActivation::Softplus,
                tau: 0.2,
                manifold_width: 16,
            },
            noise_sigma: 0.3,
            test_size: DEFAULT_TEST_SIZE,
            test_noise: false,
            optimizer: OptimizerSpec::gd(5.0),
            train_layers: TrainLayers::Both,
            epochs: CONVERGENCE_EPOCH_CAP,
            stop_loss: 1e-5,
            record_every: 100,
            metrics: MetricLevel::Kernels,
            trials: DEFAULT_TRIALS,
            seed: 0,
            precision: Precision::F64,
            spectral: SpectralOptions::default(),
            lazy: LazyOptions::default(),
            sweep: SweepConfig::default(),
            scaling: ScalingConfig::default(),
            convergence: ConvergenceConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Applies `key=value` overrides in order. Keys are dotted paths that must
    /// already exist; values parse as JSON and fall back to plain strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut value = self.to_value();
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 2 || self.d < 2 || self.h < 2 {
            return bad(format!("dims n={}, d={}, h={} must all be ≥ 2", self.n, self.d, self.h));
        }
        if self.trials == 0 {
            return bad("trials must be ≥ 1".into());
        }
        if self.test_size == 0 {
            return bad("test_size must be ≥ 1".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be ≥ 0".into());
        }
        if self.record_every == 0 {
            return bad("record_every must be ≥ 1".into());
        }
        if !(self.stop_loss >= 0.0) {
            return bad("stop_loss must be ≥ 0".into());
        }
        self.optimizer.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.sweep.learning_rates.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("sweep.learning_rates must be strictly increasing".into());
        }
        if self.sweep.learning_rates.iter().any(|&x| !(x > 0.0)) {
            return bad("sweep.learning_rates must be positive".into());
        }
        let s = &self.scaling;
        if !(s.gamma1 > 0.0 && s.gamma2 > 0.0) {
            return bad("scaling ratios must be positive".into());
        }
        for (key, f) in [
            ("convergence.eta_fraction", self.convergence.eta_fraction),
            ("scaling.eta_fraction", s.eta_fraction),
        ] {
            if matches!(f, Some(f) if !(f > 0.0)) {
                return bad(format!("{key} must be > 0"));
            }
        }
        Ok(())
    }

    pub fn activation_spec(&self) -> Result<ActivationSpec> {
        normalize_activation_with(self.activation, self.activation_normalization)
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer.clone(),
            epochs: self.epochs,
            stop_loss: self.stop_loss,
            train_layers: self.train_layers,
            record_every: self.record_every,
            seed,
            metrics: self.metrics,
        }
    }

    /// Copy with dims derived from `n` at the scaling ratios.
    pub fn scaled_to(&self, n: usize) -> Result<Self> {
        let (d, h) = scaled_dims(n, self.scaling.gamma1, self.scaling.gamma2)?;
        Ok(Self {
            n,
            d,
            h,
            ..self.clone()
        })
    }
}

/// `d = round(n/γ₁)`, `h = round(γ₂·d)`, rejecting grids that miss either
/// ratio by more than 1%.
pub fn scaled_dims(n: usize, gamma1: f64, gamma2: f64) -> Result<(usize, usize)> {
    let d = ((n as f64 / gamma1).round() as usize).max(2);
    let h = ((gamma2 * d as f64).round() as usize).max(2);
    let g1 = n as f64 / d as f64;
    let g2 = h as f64 / d as f64;
    if (g1 / gamma1 - 1.0).abs() > RATIO_TOLERANCE || (g2 / gamma2 - 1.0).abs() > RATIO_TOLERANCE {
        return Err(Error::Config(format!(
            "n={n} cannot keep ratios γ1={gamma1}, γ2={gamma2} within 1% (got {g1:.4}, {g2:.4})"
        )));
    }
    Ok((d, h))
}

pub fn apply_override(root: &mut Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not KEY=VALUE")))?;
    let mut node = root;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(move |i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
    }
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Small instance for fast tests.
#[cfg(test)]
pub(crate) fn tiny() -> ExperimentConfig {
    ExperimentConfig {
        name: "tiny".into(),
        n: 60,
        d: 20,
        h: 40,
        test_size: 200,
        optimizer: OptimizerSpec::gd(1.0),
        epochs: 30,
        record_every: 10,
        trials: 2,
        sweep: SweepConfig {
            learning_rates: vec![0.5, 2.0],
            epoch_cap: 30,
        },
        ..ExperimentConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerKind;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn partial_config_and_unknown_keys() {
        let cfg = ExperimentConfig::from_json(
            r#"{"n": 300, "optimizer": {"kind": "sgd", "learning_rate": 22.0}}"#,
        )
        .unwrap();
        assert_eq!(cfg.n, 300);
        assert_eq!(cfg.optimizer.kind, OptimizerKind::Sgd);
        assert_eq!(cfg.optimizer.batch, Some(128));
        assert!(ExperimentConfig::from_json(r#"{"widht": 3}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"n": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"trials": 0}"#).is_err());
    }

    #[test]
    fn overrides() {
        let base = ExperimentConfig::default();
        let cfg = base
            .with_overrides(&[
                "optimizer.batch=64".into(),
                "name=sweep".into(),
                "optimizer.batch=32".into(),
                "scaling.n_list=[200,400]".into(),
                "teacher.target=tanh".into(),
            ])
            .unwrap();
        assert_eq!(cfg.optimizer.batch, Some(32));
        assert_eq!(cfg.name, "sweep");
        assert_eq!(cfg.scaling.n_list, vec![200, 400]);
        assert_eq!(cfg.teacher.target, BaseActivation::Tanh);
        assert!(base.with_overrides(&["optimizer.bacth=3".into()]).is_err());
        assert!(base.with_overrides(&["n".into()]).is_err());
        assert!(base.with_overrides(&["n=abc".into()]).is_err());
        assert!(base.with_overrides(&["n=1".into()]).is_err());
    }

    #[test]
    fn scaling_dims_keep_ratios() {
        for &n in &DEFAULT_SCALING_GRID {
            let (d, h) = scaled_dims(n, 5.0 / 3.0, 2.0).unwrap();
            assert!(((n as f64 / d as f64) / (5.0 / 3.0) - 1.0).abs() <= 0.01);
            assert_eq!(h, 2 * d);
        }
        assert_eq!(scaled_dims(1000, 5.0 / 3.0, 2.0).unwrap(), (600, 1200));
        assert!(scaled_dims(7, 5.0 / 3.0, 2.0).is_err());
    }
}
