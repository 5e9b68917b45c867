//! Experiment runner: reference cases, the lazy baseline, learning-rate sweeps,
//! scaling studies, convergence-bound checks and spectra snapshots.

mod case;
pub mod config;
mod convergence;
pub mod output;
mod scaling;
mod sweep;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::data::{sample_dataset, Dataset, Split, Teacher};
use crate::error::{Error, Result};
use crate::model::{init_model, ModelState};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

pub use case::{
    kta_curves, kta_evolution, run_case, run_lazy, spectra_snapshot, CaseReport, CaseSummary,
    KtaCurve, LazyReport, LazyTrial, SpectraReport, SpectralPair, TrialReport,
};
pub use config::{
    ConvergenceConfig, ExperimentConfig, Precision, ScalingConfig, ScalingMode, SweepConfig,
};
pub use convergence::{
    admissible_learning_rate, convergence_check, BoundMargins, CheckStatus, ConvergenceReport,
    ConvergenceTrial, Violation,
};
pub use output::RunDir;
pub use scaling::{log_log_slope, scaling_study, ScalingQuantities, ScalingResult, ScalingRow};
pub use sweep::{sweep_learning_rate, SweepEdges, SweepPoint, TransitionSweepResult};

pub const THREADS_ENV: &str = "SPECTRAL_LAB_THREADS";

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

/// Everything one trial needs: teacher, train/test data and the initial model.
pub struct Setup<T> {
    pub activation: ActivationSpec,
    pub teacher: Teacher,
    pub train: Dataset<T>,
    pub test: Dataset<T>,
    pub model: ModelState<T>,
}

pub fn setup<T: Scalar>(cfg: &ExperimentConfig, seed: u64) -> Result<Setup<T>> {
    setup_with_test(cfg, seed, cfg.test_size)
}

pub fn setup_with_test<T: Scalar>(cfg: &ExperimentConfig, seed: u64, test_size: usize) -> Result<Setup<T>> {
    let activation = cfg.activation_spec()?;
    let teacher = cfg.teacher.build(cfg.d, seed)?;
    let train = sample_dataset(cfg.d, cfg.n, &teacher, cfg.noise_sigma, seed, Split::Train)?;
    let test_sigma = if cfg.test_noise { cfg.noise_sigma } else { 0.0 };
    let test = sample_dataset(cfg.d, test_size.max(1), &teacher, test_sigma, seed, Split::Test)?;
    let model = init_model(cfg.h, cfg.d, activation, cfg.init, &mut stream_rng(seed, Stream::Weights))?;
    Ok(Setup {
        activation,
        teacher,
        train,
        test,
        model,
    })
}

/// Worker count from `SPECTRAL_LAB_THREADS`, or rayon's default.
pub fn thread_count() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Maps `f` over `items` on a pool sized by [`thread_count`], keeping input order.
pub(crate) fn parallel_map<I, O, F>(items: &[I], f: F) -> Result<Vec<O>>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> Result<O> + Sync + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

/// Dispatches a generic runner on the configured precision.
#[macro_export]
#[doc(hidden)]
macro_rules! with_precision {
    ($cfg:expr, $f:ident($($arg:expr),*)) => {
        match $cfg.precision {
            $crate::harness::Precision::F64 => $f::<f64>($($arg),*),
            $crate::harness::Precision::F32 => $f::<f32>($($arg),*),
        }
    };
}
