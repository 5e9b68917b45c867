use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::{parallel_map, setup};
use crate::error::Result;
use crate::kernels::{ck_from_cache, ntk_from_cache, InputGram, KernelKind};
use crate::linalg::Matrix;
use crate::model::{r_squared, ModelState};
use crate::scalar::Scalar;
use crate::spectral::{alignment, top_eigenpairs};
use crate::train::{train, MetricLevel, TrainConfig};
use crate::with_precision;

/// Leading eigenvalues of the initialization, used as bulk edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepEdges {
    /// `λ_max(W₀W₀ᵀ/d)`.
    pub weight: f64,
    pub ck: f64,
    pub ntk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub learning_rate: f64,
    pub lambda_weight: Option<f64>,
    pub lambda_ck: Option<f64>,
    pub lambda_ntk: Option<f64>,
    /// `|βᵀu₁|/‖β‖` with `u₁` the leading right singular vector of `W`.
    pub alignment_beta: Option<f64>,
    /// `|yᵀv₁|/‖y‖` with `v₁` the leading eigenvector of the CK.
    pub alignment_ck: Option<f64>,
    pub alignment_ntk: Option<f64>,
    pub epochs: usize,
    pub hit_cap: bool,
    pub final_loss: Option<f64>,
    pub r2: Option<f64>,
    /// Set when training diverged; the sweep continues with the next rate.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSweepResult {
    pub config: ExperimentConfig,
    pub edges: SweepEdges,
    pub initial: SweepPoint,
    pub points: Vec<SweepPoint>,
}

struct Leading {
    weight: f64,
    ck: f64,
    ntk: f64,
    ck_edge: f64,
    ntk_edge: f64,
    alignment_beta: Option<f64>,
    alignment_ck: Option<f64>,
    alignment_ntk: Option<f64>,
}

fn leading<T: Scalar>(
    model: &ModelState<T>,
    x: &Matrix<T>,
    y: &[T],
    beta: Option<&[f64]>,
    kind: KernelKind,
    trim: usize,
) -> Result<Leading> {
    let yf: Vec<f64> = y.iter().map(|v| v.to_f64_lossy()).collect();
    let mut gram = model.w.matmul_tn(&model.w)?;
    gram.scale_inplace(T::one() / T::from_usize_lossy(model.d()));
    gram.symmetrize_inplace();
    let w = top_eigenpairs(&gram, 1)?;
    drop(gram);
    let fwd = model.forward_cache(x)?;
    let count = trim + 1;
    let ck = top_eigenpairs(&ck_from_cache(&fwd)?.k, count)?;
    let ntk = top_eigenpairs(&ntk_from_cache(model, &fwd, &InputGram::new(x)?, kind)?.k, count)?;
    Ok(Leading {
        weight: w.values[0],
        ck: ck.values[0],
        ntk: ntk.values[0],
        ck_edge: ck.values[trim.min(ck.values.len() - 1)],
        ntk_edge: ntk.values[trim.min(ntk.values.len() - 1)],
        alignment_beta: beta.and_then(|b| alignment(&w.vectors[0], b).ok()),
        alignment_ck: alignment(&ck.vectors[0], &yf).ok(),
        alignment_ntk: alignment(&ntk.vectors[0], &yf).ok(),
    })
}

fn sweep_impl<T: Scalar>(cfg: &ExperimentConfig) -> Result<TransitionSweepResult> {
    cfg.validate()?;
    let s = setup::<T>(cfg, cfg.seed)?;
    let kind = cfg.train_config(cfg.seed).ntk_kind();
    let beta = s.teacher.beta().map(|b| b.to_vec());
    let init = leading(&s.model, &s.train.x, &s.train.y, beta.as_deref(), kind, cfg.spectral.edge_trim)?;
    let edges = SweepEdges {
        weight: init.weight,
        ck: init.ck_edge,
        ntk: init.ntk_edge,
    };
    let f0 = s.model.forward(&s.test.x)?;
    let initial = SweepPoint {
        learning_rate: 0.0,
        lambda_weight: Some(init.weight),
        lambda_ck: Some(init.ck),
        lambda_ntk: Some(init.ntk),
        alignment_beta: init.alignment_beta,
        alignment_ck: init.alignment_ck,
        alignment_ntk: init.alignment_ntk,
        epochs: 0,
        hit_cap: false,
        final_loss: Some(s.model.mse_loss(&s.train.x, &s.train.y)?.to_f64_lossy()),
        r2: r_squared(&s.test.y, &f0).ok(),
        error: None,
    };
    let points = parallel_map(&cfg.sweep.learning_rates, |&lr| {
        let mut optimizer = cfg.optimizer.clone();
        optimizer.learning_rate = lr;
        let epochs = cfg.sweep.epoch_cap;
        let tcfg = TrainConfig {
            optimizer,
            epochs,
            stop_loss: cfg.stop_loss,
            train_layers: cfg.train_layers,
            record_every: epochs.max(1),
            seed: cfg.seed,
            metrics: MetricLevel::Loss,
        };
        let mut point = SweepPoint {
            learning_rate: lr,
            lambda_weight: None,
            lambda_ck: None,
            lambda_ntk: None,
            alignment_beta: None,
            alignment_ck: None,
            alignment_ntk: None,
            epochs: 0,
            hit_cap: false,
            final_loss: None,
            r2: None,
            error: None,
        };
        match train(s.model.clone(), &s.train, Some(&s.test), &tcfg) {
            Ok(out) => {
                let l = leading(&out.model, &s.train.x, &s.train.y, beta.as_deref(), kind, cfg.spectral.edge_trim)?;
                let last = out.trace.last();
                point.lambda_weight = Some(l.weight);
                point.lambda_ck = Some(l.ck);
                point.lambda_ntk = Some(l.ntk);
                point.alignment_beta = l.alignment_beta;
                point.alignment_ck = l.alignment_ck;
                point.alignment_ntk = l.alignment_ntk;
                point.epochs = out.trace.epochs_run;
                point.hit_cap = out.trace.hit_cap();
                point.final_loss = Some(last.train_loss);
                point.r2 = last.test_r2;
            }
            Err(e @ crate::error::Error::Divergence { .. }) => point.error = Some(e.to_string()),
            Err(e) => return Err(e),
        }
        Ok(point)
    })?;
    Ok(TransitionSweepResult {
        config: cfg.clone(),
        edges,
        initial,
        points,
    })
}

/// Trains one shared initialization on one shared dataset at each learning rate
/// of `cfg.sweep.learning_rates`, recording leading eigenvalues and alignments.
pub fn sweep_learning_rate(cfg: &ExperimentConfig) -> Result<TransitionSweepResult> {
    with_precision!(cfg, sweep_impl(cfg))
}
