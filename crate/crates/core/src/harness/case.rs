use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::{parallel_map, setup, setup_with_test, MeanSd};
use crate::activation::ntk_min_eig_bound;
use crate::error::{Error, Result};
use crate::kernels::{ck_from_cache, ntk_from_cache, InputGram, KernelKind};
use crate::lazy::fit_lazy;
use crate::linalg::Matrix;
use crate::model::{mean_squared_error, r_squared, write_checkpoint, ModelState};
use crate::scalar::Scalar;
use crate::spectral::{
    alignment, bulk_edge, esd, kta, qq_pairs, spectrum, top_eigenpairs, weight_gram, Histogram,
    MarchenkoPastur, SpectralOptions, SpectralReport,
};
use crate::train::{train, StopReason, TrainTrace};
use crate::with_precision;

/// Initial and trained spectra of one matrix family, sharing the initial bulk edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralPair {
    pub initial: SpectralReport,
    pub trained: SpectralReport,
    /// Max absolute quantile deviation between the two spectra.
    pub qq_deviation: f64,
}

impl SpectralPair {
    fn new(initial: Snapshot, trained: Snapshot, opts: &SpectralOptions) -> Result<Self> {
        let edge = bulk_edge(&initial.eigenvalues, opts.edge_trim)?;
        let qq_deviation = qq_pairs(&initial.eigenvalues, &trained.eigenvalues)?.max_deviation;
        Ok(Self {
            initial: initial.report(edge, opts),
            trained: trained.report(edge, opts),
            qq_deviation,
        })
    }
}

struct Snapshot {
    eigenvalues: Vec<f64>,
    kta: Option<f64>,
    leading_alignment: Option<f64>,
}

impl Snapshot {
    fn report(self, edge: f64, opts: &SpectralOptions) -> SpectralReport {
        let mut r = SpectralReport::new(&self.eigenvalues, edge, opts);
        r.kta = self.kta;
        r.leading_alignment = self.leading_alignment;
        r
    }
}

fn as_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

fn kernel_snapshot<T: Scalar>(k: &Matrix<T>, y: &[T]) -> Result<Snapshot> {
    let top = top_eigenpairs(k, 1)?;
    Ok(Snapshot {
        eigenvalues: spectrum(k)?,
        kta: kta(k, y).ok(),
        leading_alignment: alignment(&top.vectors[0], &as_f64(y)).ok(),
    })
}

/// Spectra of `WᵀW/h`, `K^CK` and the NTK at a model state, with alignments of
/// the leading directions to `β` (weights) and to `y` (kernels).
fn snapshots<T: Scalar>(
    model: &ModelState<T>,
    x: &Matrix<T>,
    y: &[T],
    beta: Option<&[f64]>,
    ntk_kind: KernelKind,
) -> Result<[Snapshot; 3]> {
    let gram = weight_gram(&model.w)?;
    let weight = Snapshot {
        eigenvalues: spectrum(&gram)?,
        kta: None,
        leading_alignment: match beta {
            Some(b) => alignment(&top_eigenpairs(&gram, 1)?.vectors[0], b).ok(),
            None => None,
        },
    };
    drop(gram);
    let fwd = model.forward_cache(x)?;
    let ck = kernel_snapshot(&ck_from_cache(&fwd)?.k, y)?;
    let ntk = kernel_snapshot(&ntk_from_cache(model, &fwd, &InputGram::new(x)?, ntk_kind)?.k, y)?;
    Ok([weight, ck, ntk])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub seed: u64,
    pub r2: f64,
    /// Test mean squared error.
    pub test_error: f64,
    pub final_train_loss: f64,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    pub hit_cap: bool,
    pub weight: SpectralPair,
    pub ck: SpectralPair,
    pub ntk: SpectralPair,
    pub trace: TrainTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub r2: MeanSd,
    pub test_error: MeanSd,
    pub epochs: MeanSd,
    pub capped_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub config: ExperimentConfig,
    pub summary: CaseSummary,
    pub trials: Vec<TrialReport>,
}

fn run_trial<T: Scalar>(cfg: &ExperimentConfig, seed: u64, checkpoint_dir: Option<&Path>) -> Result<TrialReport> {
    let s = setup::<T>(cfg, seed)?;
    let tcfg = cfg.train_config(seed);
    let ntk_kind = tcfg.ntk_kind();
    let beta = s.teacher.beta().map(|b| b.to_vec());
    let [w0, ck0, ntk0] = snapshots(&s.model, &s.train.x, &s.train.y, beta.as_deref(), ntk_kind)?;
    let out = train(s.model, &s.train, Some(&s.test), &tcfg)?;
    let [w1, ck1, ntk1] = snapshots(&out.model, &s.train.x, &s.train.y, beta.as_deref(), ntk_kind)?;
    let f = out.model.forward(&s.test.x)?;
    if let Some(dir) = checkpoint_dir {
        let path = dir.join(format!("checkpoint-seed{seed}.bin"));
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_checkpoint(&mut file, &out.model)?;
    }
    let opts = &cfg.spectral;
    Ok(TrialReport {
        seed,
        r2: r_squared(&s.test.y, &f)?,
        test_error: mean_squared_error(&s.test.y, &f)?,
        final_train_loss: out.trace.last().train_loss,
        epochs_run: out.trace.epochs_run,
        stop_reason: out.trace.stop_reason,
        hit_cap: out.trace.hit_cap(),
        weight: SpectralPair::new(w0, w1, opts)?,
        ck: SpectralPair::new(ck0, ck1, opts)?,
        ntk: SpectralPair::new(ntk0, ntk1, opts)?,
        trace: out.trace,
    })
}

fn run_case_impl<T: Scalar>(cfg: &ExperimentConfig, checkpoint_dir: Option<&Path>) -> Result<CaseReport> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.trials).map(|i| cfg.trial_seed(i)).collect();
    let trials = parallel_map(&seeds, |&seed| run_trial::<T>(cfg, seed, checkpoint_dir))?;
    let col = |f: fn(&TrialReport) -> f64| MeanSd::of(&trials.iter().map(f).collect::<Vec<_>>());
    Ok(CaseReport {
        config: cfg.clone(),
        summary: CaseSummary {
            r2: col(|t| t.r2),
            test_error: col(|t| t.test_error),
            epochs: col(|t| t.epochs_run as f64),
            capped_trials: trials.iter().filter(|t| t.hit_cap).count(),
        },
        trials,
    })
}

/// Trains `cfg.trials` independent seeds and summarizes test performance and spectra.
/// When `checkpoint_dir` is given, each final model is saved there.
pub fn run_case(cfg: &ExperimentConfig, checkpoint_dir: Option<&Path>) -> Result<CaseReport> {
    with_precision!(cfg, run_case_impl(cfg, checkpoint_dir))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LazyTrial {
    pub seed: u64,
    pub r2: f64,
    pub test_error: f64,
    pub kernel_rank: usize,
    pub lambda_max: f64,
    pub lambda_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LazyReport {
    pub config: ExperimentConfig,
    /// Lower bound on the smallest NTK eigenvalue from the activation's Hermite coefficients.
    pub ntk_floor: f64,
    pub r2: MeanSd,
    pub test_error: MeanSd,
    pub trials: Vec<LazyTrial>,
}

fn run_lazy_impl<T: Scalar>(cfg: &ExperimentConfig) -> Result<LazyReport> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.trials).map(|i| cfg.trial_seed(i)).collect();
    let trials = parallel_map(&seeds, |&seed| {
        let s = setup::<T>(cfg, seed)?;
        let p = fit_lazy(&s.model, &s.train.x, &s.train.y, cfg.lazy)?;
        let m = p.metrics(&s.test.x, &s.test.y)?;
        let eigs = p.kernel_eigenvalues();
        Ok(LazyTrial {
            seed,
            r2: m.r2,
            test_error: m.test_mse,
            kernel_rank: p.kernel_rank(),
            lambda_max: eigs[0].to_f64_lossy(),
            lambda_min: eigs[eigs.len() - 1].to_f64_lossy(),
        })
    })?;
    let ntk_floor = ntk_min_eig_bound(&cfg.activation_spec()?)?.bound;
    Ok(LazyReport {
        config: cfg.clone(),
        ntk_floor,
        r2: MeanSd::of(&trials.iter().map(|t| t.r2).collect::<Vec<_>>()),
        test_error: MeanSd::of(&trials.iter().map(|t| t.test_error).collect::<Vec<_>>()),
        trials,
    })
}

/// Kernel-regression baseline with the initial NTK, one fit per trial seed.
pub fn run_lazy(cfg: &ExperimentConfig) -> Result<LazyReport> {
    with_precision!(cfg, run_lazy_impl(cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KtaCurve {
    pub name: String,
    pub seed: u64,
    /// `(epoch / epochs_run, KTA of the CK)` at every recorded epoch.
    pub points: Vec<(f64, f64)>,
    pub final_kta: f64,
}

/// CK alignment curves of every trial in a case report, on a normalized epoch axis.
pub fn kta_curves(report: &CaseReport) -> Result<Vec<KtaCurve>> {
    report
        .trials
        .iter()
        .map(|t| {
            let total = t.trace.epochs_run.max(1) as f64;
            let points: Vec<(f64, f64)> = t
                .trace
                .rows
                .iter()
                .filter_map(|r| r.kta_ck.map(|k| (r.epoch as f64 / total, k)))
                .collect();
            let final_kta = points
                .last()
                .map(|p| p.1)
                .ok_or_else(|| Error::Config("KTA curves need metrics at the kernels level".into()))?;
            Ok(KtaCurve {
                name: report.config.name.clone(),
                seed: t.seed,
                points,
                final_kta,
            })
        })
        .collect()
}

/// Runs each case and collects its KTA curves.
pub fn kta_evolution(configs: &[ExperimentConfig]) -> Result<Vec<KtaCurve>> {
    let mut out = Vec::new();
    for cfg in configs {
        out.extend(kta_curves(&run_case(cfg, None)?)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectraReport {
    pub config: ExperimentConfig,
    pub seed: u64,
    /// `init` or `checkpoint`.
    pub source: String,
    pub weight: SpectralReport,
    pub ck: SpectralReport,
    pub ntk: SpectralReport,
    pub weight_histogram: Histogram,
    /// KS distance of the `WᵀW/h` spectrum to the Marchenko–Pastur law with ratio `d/h`.
    pub mp_ks_distance: f64,
}

pub const ESD_BINS: usize = 60;

/// Spectra of a fresh initialization, or of `checkpoint` when given, on the
/// training inputs drawn from `cfg.seed`.
pub fn spectra_snapshot(cfg: &ExperimentConfig, checkpoint: Option<ModelState<f64>>) -> Result<SpectraReport> {
    let (cfg, source) = match &checkpoint {
        Some(m) => (
            ExperimentConfig {
                h: m.h(),
                d: m.d(),
                ..cfg.clone()
            },
            "checkpoint",
        ),
        None => (cfg.clone(), "init"),
    };
    cfg.validate()?;
    let s = setup_with_test::<f64>(&cfg, cfg.seed, 1)?;
    let model = checkpoint.unwrap_or(s.model);
    let beta = s.teacher.beta().map(|b| b.to_vec());
    let kind = cfg.train_config(cfg.seed).ntk_kind();
    let [w, ck, ntk] = snapshots(&model, &s.train.x, &s.train.y, beta.as_deref(), kind)?;
    let mp = MarchenkoPastur::new(cfg.d as f64 / cfg.h as f64, 1.0)?;
    let mp_ks_distance = mp.ks_distance(&w.eigenvalues);
    let weight_histogram = esd(&w.eigenvalues, ESD_BINS)?;
    let opts = &cfg.spectral;
    let own_edge = |snap: Snapshot| -> Result<SpectralReport> {
        let edge = bulk_edge(&snap.eigenvalues, opts.edge_trim)?;
        Ok(snap.report(edge, opts))
    };
    Ok(SpectraReport {
        seed: cfg.seed,
        source: source.into(),
        weight: own_edge(w)?,
        ck: own_edge(ck)?,
        ntk: own_edge(ntk)?,
        weight_histogram,
        mp_ks_distance,
        config: cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::tiny;
    use crate::model::read_checkpoint;

    #[test]
    fn case_is_deterministic_and_checkpoints() {
        let cfg = tiny();
        let dir = tempfile::tempdir().unwrap();
        let a = run_case(&cfg, Some(dir.path())).unwrap();
        let b = run_case(&cfg, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trials.len(), 2);
        assert_eq!(a.trials[1].seed, 1);
        assert!(a.summary.r2.mean.is_finite());
        assert!(a.trials.iter().all(|t| t.final_train_loss < t.trace.rows[0].train_loss));
        let mut f = std::fs::File::open(dir.path().join("checkpoint-seed0.bin")).unwrap();
        let m: ModelState<f64> = read_checkpoint(&mut f).unwrap();
        let snap = spectra_snapshot(&cfg, Some(m)).unwrap();
        assert_eq!(snap.source, "checkpoint");
        let trained = &a.trials[0].weight.trained.eigenvalues;
        let max_rel = snap
            .weight
            .eigenvalues
            .iter()
            .zip(trained)
            .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
            .fold(0.0, f64::max);
        assert!(max_rel < 1e-12, "{max_rel}");
    }

    #[test]
    fn f32_precision_runs() {
        let cfg = ExperimentConfig {
            precision: crate::harness::Precision::F32,
            trials: 1,
            ..tiny()
        };
        let r = run_case(&cfg, None).unwrap();
        assert!(r.summary.r2.mean.is_finite());
    }

    #[test]
    fn lazy_interpolates_on_tiny_instance() {
        let cfg = tiny();
        let r = run_lazy(&cfg).unwrap();
        assert_eq!(r.trials.len(), 2);
        assert!(r.trials.iter().all(|t| t.kernel_rank == cfg.n && t.lambda_min > 0.0));
        assert!(r.r2.mean.is_finite());
    }

    #[test]
    fn kta_curve_per_trial() {
        let cfg = ExperimentConfig {
            metrics: crate::train::MetricLevel::Kernels,
            ..tiny()
        };
        let curves = kta_evolution(&[cfg]).unwrap();
        assert_eq!(curves.len(), 2);
        assert_eq!(curves[0].points.len(), 4);
        assert!(curves.iter().all(|c| c.final_kta > 0.0 && c.final_kta <= 1.0));
    }

    #[test]
    fn fresh_spectra_follow_marchenko_pastur() {
        let cfg = ExperimentConfig {
            n: 200,
            d: 200,
            h: 400,
            ..tiny()
        };
        let s = spectra_snapshot(&cfg, None).unwrap();
        assert_eq!(s.source, "init");
        assert_eq!(s.weight.eigenvalues.len(), 200);
        assert!(s.mp_ks_distance < 0.1, "{}", s.mp_ks_distance);
    }
}
