//! Training loop with full-batch loss tracking and a per-record trace of norm
//! changes, kernel alignment and spectra.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{ck_from_cache, ntk_from_cache, InputGram, KernelKind};
use crate::linalg::{frobenius_norm, Matrix};
use crate::model::{mean_squared_error, r_squared, Forward, ModelState, TrainLayers};
use crate::optim::{Optimizer, OptimizerSpec};
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;
use crate::spectral::{
    heavy_tail_metrics, kernel_change, kta, power_law_alpha, spectrum, top_eigenpairs,
    weight_change, weight_gram, DEFAULT_TAIL_FRACTION,
};

pub const DIVERGENCE_LOSS: f64 = 1e12;
pub const TOP_EIGENVALUES: usize = 5;

/// How much is computed at each recorded epoch; each level includes the previous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricLevel {
    Loss,
    Weights,
    Kernels,
    Spectral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerSpec,
    pub epochs: usize,
    /// Training stops once the full-batch loss drops below this value.
    pub stop_loss: f64,
    pub train_layers: TrainLayers,
    pub record_every: usize,
    pub seed: u64,
    #[serde(default = "default_metrics")]
    pub metrics: MetricLevel,
}

fn default_metrics() -> MetricLevel {
    MetricLevel::Kernels
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerSpec, epochs: usize) -> Self {
        Self {
            optimizer,
            epochs,
            stop_loss: 0.0,
            train_layers: TrainLayers::Both,
            record_every: 1,
            seed: 0,
            metrics: MetricLevel::Loss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be ≥ 1".into()));
        }
        if !(self.stop_loss >= 0.0) {
            return Err(Error::InvalidParameter("stop_loss must be ≥ 0".into()));
        }
        Ok(())
    }

    /// NTK variant matching the trained layers.
    pub fn ntk_kind(&self) -> KernelKind {
        match self.train_layers {
            TrainLayers::Both => KernelKind::Ntk,
            TrainLayers::FirstOnly => KernelKind::NtkFirstLayer,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerLawColumns {
    pub alpha: Option<f64>,
    pub weighted_alpha: Option<f64>,
    pub log_alpha_norm: Option<f64>,
}

impl PowerLawColumns {
    fn from_spectrum(eigs: &[f64]) -> Self {
        match power_law_alpha(eigs, DEFAULT_TAIL_FRACTION) {
            Ok(fit) => {
                let ht = heavy_tail_metrics(eigs, fit.alpha).ok();
                Self {
                    alpha: Some(fit.alpha),
                    weighted_alpha: ht.map(|m| m.weighted_alpha),
                    log_alpha_norm: ht.map(|m| m.log_alpha_norm),
                }
            }
            Err(_) => Self::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub steps: u64,
    /// `(1/2n)‖y − f‖²` on the full training set.
    pub train_loss: f64,
    /// `‖y − f‖` on the full training set.
    pub residual_norm: f64,
    /// `Σ_t ‖W_{t+1} − W_t‖_F` over all optimizer steps so far.
    pub path_length: f64,
    pub test_mse: Option<f64>,
    pub test_r2: Option<f64>,
    pub w_op: Option<f64>,
    pub w_fro: Option<f64>,
    pub w_2inf: Option<f64>,
    pub ck_op: Option<f64>,
    pub ck_fro: Option<f64>,
    pub ntk_op: Option<f64>,
    pub ntk_fro: Option<f64>,
    pub kta_ck: Option<f64>,
    pub kta_ntk: Option<f64>,
    pub ck_top: Vec<f64>,
    pub ntk_top: Vec<f64>,
    pub w_power_law: PowerLawColumns,
    pub ck_power_law: PowerLawColumns,
    pub ntk_power_law: PowerLawColumns,
}

impl TraceRow {
    pub fn columns() -> Vec<String> {
        let mut cols: Vec<String> = [
            "epoch",
            "steps",
            "train_loss",
            "residual_norm",
            "path_length",
            "test_mse",
            "test_r2",
            "w_op",
            "w_fro",
            "w_2inf",
            "ck_op",
            "ck_fro",
            "ntk_op",
            "ntk_fro",
            "kta_ck",
            "kta_ntk",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for kernel in ["ck", "ntk"] {
            cols.extend((1..=TOP_EIGENVALUES).map(|i| format!("{kernel}_top{i}")));
        }
        for m in ["w", "ck", "ntk"] {
            for s in ["alpha", "weighted_alpha", "log_alpha_norm"] {
                cols.push(format!("{m}_{s}"));
            }
        }
        cols
    }

    fn cells(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = vec![
            self.epoch.to_string(),
            self.steps.to_string(),
            self.train_loss.to_string(),
            self.residual_norm.to_string(),
            self.path_length.to_string(),
        ];
        out.extend(
            [
                self.test_mse,
                self.test_r2,
                self.w_op,
                self.w_fro,
                self.w_2inf,
                self.ck_op,
                self.ck_fro,
                self.ntk_op,
                self.ntk_fro,
                self.kta_ck,
                self.kta_ntk,
            ]
            .map(opt),
        );
        for top in [&self.ck_top, &self.ntk_top] {
            out.extend((0..TOP_EIGENVALUES).map(|i| opt(top.get(i).copied())));
        }
        for p in [&self.w_power_law, &self.ck_power_law, &self.ntk_power_law] {
            out.extend([p.alpha, p.weighted_alpha, p.log_alpha_norm].map(opt));
        }
        out
    }

    fn all_finite(&self) -> bool {
        self.cells()
            .iter()
            .filter(|c| !c.is_empty())
            .all(|c| c.parse::<f64>().map(f64::is_finite).unwrap_or(false))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    StopLoss,
    EpochCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub config: TrainConfig,
    pub rows: Vec<TraceRow>,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
}

impl TrainTrace {
    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("trace always has the initial row")
    }

    pub fn hit_cap(&self) -> bool {
        self.stop_reason == StopReason::EpochCap
    }

    /// JSON header: the training configuration and the CSV column names.
    pub fn header(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self.config,
            "epochs_run": self.epochs_run,
            "stop_reason": self.stop_reason,
            "columns": TraceRow::columns(),
        })
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{}", TraceRow::columns().join(","))?;
        for row in &self.rows {
            writeln!(w, "{}", row.cells().join(","))?;
        }
        Ok(())
    }
}

/// State handed to observers at every recorded epoch.
pub struct Snapshot<'a, T> {
    pub epoch: usize,
    pub model: &'a ModelState<T>,
    pub forward: &'a Forward<T>,
    pub row: &'a TraceRow,
}

pub type Hook<'h, T> = dyn FnMut(&Snapshot<'_, T>) -> Result<()> + 'h;

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: ModelState<T>,
    pub trace: TrainTrace,
}

struct Recorder<'a, T> {
    cfg: &'a TrainConfig,
    data: &'a Dataset<T>,
    test: Option<&'a Dataset<T>>,
    w0: Matrix<T>,
    gram: Option<InputGram<T>>,
    ck0: Option<Matrix<T>>,
    ntk0: Option<Matrix<T>>,
}

impl<'a, T: Scalar> Recorder<'a, T> {
    fn new(
        cfg: &'a TrainConfig,
        data: &'a Dataset<T>,
        test: Option<&'a Dataset<T>>,
        model: &ModelState<T>,
        fwd: &Forward<T>,
    ) -> Result<Self> {
        let mut rec = Self {
            cfg,
            data,
            test,
            w0: model.w.clone(),
            gram: None,
            ck0: None,
            ntk0: None,
        };
        if cfg.metrics >= MetricLevel::Kernels {
            let gram = InputGram::new(&data.x)?;
            rec.ck0 = Some(ck_from_cache(fwd)?.k);
            rec.ntk0 = Some(ntk_from_cache(model, fwd, &gram, cfg.ntk_kind())?.k);
            rec.gram = Some(gram);
        }
        Ok(rec)
    }

    fn row(
        &self,
        epoch: usize,
        steps: u64,
        path_length: f64,
        ell: f64,
        model: &ModelState<T>,
        fwd: &Forward<T>,
    ) -> Result<TraceRow> {
        let n = self.data.n() as f64;
        let mut row = TraceRow {
            epoch,
            steps,
            train_loss: ell * ell / (2.0 * n),
            residual_norm: ell,
            path_length,
            ..Default::default()
        };
        if let Some(test) = self.test {
            let f = model.forward(&test.x)?;
            row.test_mse = Some(mean_squared_error(&test.y, &f)?);
            row.test_r2 = Some(r_squared(&test.y, &f)?);
        }
        let level = self.cfg.metrics;
        if level >= MetricLevel::Weights {
            let (op, fro, tinf) = weight_change(&self.w0, &model.w)?;
            row.w_op = Some(op);
            row.w_fro = Some(fro);
            row.w_2inf = Some(tinf);
        }
        if level >= MetricLevel::Kernels {
            let gram = self.gram.as_ref().expect("input gram cached at kernel level");
            let spectral = level >= MetricLevel::Spectral;
            {
                let ck = ck_from_cache(fwd)?.k;
                let (op, fro) = kernel_change(self.ck0.as_ref().unwrap(), &ck)?;
                row.ck_op = Some(op);
                row.ck_fro = Some(fro);
                row.kta_ck = kta(&ck, &self.data.y).ok();
                if spectral {
                    let eigs = spectrum(&ck)?;
                    row.ck_top = eigs.iter().take(TOP_EIGENVALUES).copied().collect();
                    row.ck_power_law = PowerLawColumns::from_spectrum(&eigs);
                } else {
                    row.ck_top = top_eigenpairs(&ck, TOP_EIGENVALUES)?.values;
                }
            }
            let ntk = ntk_from_cache(model, fwd, gram, self.cfg.ntk_kind())?.k;
            let (op, fro) = kernel_change(self.ntk0.as_ref().unwrap(), &ntk)?;
            row.ntk_op = Some(op);
            row.ntk_fro = Some(fro);
            row.kta_ntk = kta(&ntk, &self.data.y).ok();
            if spectral {
                let eigs = spectrum(&ntk)?;
                row.ntk_top = eigs.iter().take(TOP_EIGENVALUES).copied().collect();
                row.ntk_power_law = PowerLawColumns::from_spectrum(&eigs);
                drop(ntk);
                row.w_power_law = PowerLawColumns::from_spectrum(&spectrum(&weight_gram(&model.w)?)?);
            } else {
                row.ntk_top = top_eigenpairs(&ntk, TOP_EIGENVALUES)?.values;
            }
        }
        if !row.all_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: row.train_loss,
            });
        }
        Ok(row)
    }
}

fn residual_norm<T: Scalar>(y: &[T], f: &[T]) -> f64 {
    y.iter()
        .zip(f)
        .map(|(&a, &b)| (a - b).to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt()
}

fn check_loss(epoch: usize, ell: f64, n: usize) -> Result<()> {
    let loss = ell * ell / (2.0 * n as f64);
    if !loss.is_finite() || loss > DIVERGENCE_LOSS {
        return Err(Error::Divergence { epoch, loss });
    }
    Ok(())
}

pub fn train<T: Scalar>(
    model: ModelState<T>,
    data: &Dataset<T>,
    test: Option<&Dataset<T>>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with_hook(model, data, test, cfg, &mut |_| Ok(()))
}

/// Runs until `cfg.epochs` epochs have passed or the full-batch loss drops
/// below `cfg.stop_loss`. Rows are recorded at epoch 0, at multiples of
/// `record_every`, and at the final epoch; `hook` sees every recorded row.
pub fn train_with_hook<T: Scalar>(
    mut model: ModelState<T>,
    data: &Dataset<T>,
    test: Option<&Dataset<T>>,
    cfg: &TrainConfig,
    hook: &mut Hook<'_, T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let (x, y) = (&data.x, &data.y[..]);
    if x.rows() != model.d() || x.cols() != y.len() {
        return Err(Error::Dimension {
            context: "training data",
            expected: model.d(),
            got: x.rows(),
        });
    }
    if let Some(t) = test {
        if t.d() != model.d() {
            return Err(Error::Dimension {
                context: "test data",
                expected: model.d(),
                got: t.d(),
            });
        }
    }
    let n = data.n();
    let mut opt = Optimizer::<T>::new(&cfg.optimizer)?;
    let mut fwd = model.forward_cache(x)?;
    let mut ell = residual_norm(y, &fwd.f);
    check_loss(0, ell, n)?;
    let recorder = Recorder::new(cfg, data, test, &model, &fwd)?;
    let mut rows = Vec::new();
    let mut path_length = 0.0;
    let mut record = |epoch: usize, steps: u64, path: f64, ell: f64, model: &ModelState<T>, fwd: &Forward<T>| -> Result<()> {
        let row = recorder.row(epoch, steps, path, ell, model, fwd)?;
        hook(&Snapshot {
            epoch,
            model,
            forward: fwd,
            row: &row,
        })?;
        rows.push(row);
        Ok(())
    };
    record(0, 0, 0.0, ell, &model, &fwd)?;
    let mut shuffle = stream_rng(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch = 0;
    let mut last_recorded = 0;
    let stop_reason = loop {
        let loss = ell * ell / (2.0 * n as f64);
        if loss < cfg.stop_loss {
            break StopReason::StopLoss;
        }
        if epoch == cfg.epochs {
            break StopReason::EpochCap;
        }
        opt.start_epoch(epoch);
        let batch = opt.active().batch_size(n);
        if batch >= n {
            let grads = model.grad_from_cache(x, y, &fwd, cfg.train_layers)?;
            let before = model.w.clone();
            opt.step(&mut model, &grads, epoch + 1)?;
            path_length += frobenius_norm(&model.w.sub(&before)?).to_f64_lossy();
        } else {
            order.shuffle(&mut shuffle);
            for chunk in order.chunks(batch) {
                let xb = x.select_columns(chunk);
                let yb: Vec<T> = chunk.iter().map(|&i| y[i]).collect();
                let grads = model.grad(&xb, &yb, cfg.train_layers)?;
                let before = model.w.clone();
                opt.step(&mut model, &grads, epoch + 1)?;
                path_length += frobenius_norm(&model.w.sub(&before)?).to_f64_lossy();
            }
        }
        epoch += 1;
        fwd = model.forward_cache(x)?;
        ell = residual_norm(y, &fwd.f);
        check_loss(epoch, ell, n)?;
        if epoch % cfg.record_every == 0 {
            record(epoch, opt.steps_total(), path_length, ell, &model, &fwd)?;
            last_recorded = epoch;
        }
    };
    if last_recorded != epoch {
        record(epoch, opt.steps_total(), path_length, ell, &model, &fwd)?;
    }
    Ok(TrainOutcome {
        model,
        trace: TrainTrace {
            config: cfg.clone(),
            rows,
            epochs_run: epoch,
            stop_reason,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::{normalize_activation, BaseActivation};
    use crate::data::{sample_dataset, Split, TeacherConfig, TeacherKind};
    use crate::model::{init_model, InitKind};

    fn setup(h: usize, d: usize, n: usize) -> (ModelState<f64>, Dataset<f64>, Dataset<f64>) {
        let teacher = TeacherConfig {
            kind: TeacherKind::Mixed,
            target: BaseActivation::Softplus,
            tau: 0.2,
            manifold_width: 16,
        }
        .build(d, 3)
        .unwrap();
        let train = sample_dataset(d, n, &teacher, 0.3, 3, Split::Train).unwrap();
        let test = sample_dataset(d, 40, &teacher, 0.0, 3, Split::Test).unwrap();
        let act = normalize_activation(BaseActivation::Tanh).unwrap();
        let model = init_model(h, d, act, InitKind::Gaussian, &mut stream_rng(3, Stream::Weights)).unwrap();
        (model, train, test)
    }

    #[test]
    fn zero_epochs_gives_initial_row_only() {
        let (model, train, _) = setup(10, 5, 8);
        let mut cfg = TrainConfig::new(OptimizerSpec::gd(0.1), 0);
        cfg.stop_loss = f64::INFINITY;
        let out = super::train(model.clone(), &train, None, &cfg).unwrap();
        assert_eq!(out.trace.rows.len(), 1);
        assert_eq!(out.trace.rows[0].epoch, 0);
        assert_eq!(out.model, model);
    }

    #[test]
    fn small_gd_decreases_monotonically() {
        let (model, train, test) = setup(50, 20, 30);
        let mut cfg = TrainConfig::new(OptimizerSpec::gd(0.5), 40);
        cfg.metrics = MetricLevel::Kernels;
        let out = super::train(model, &train, Some(&test), &cfg).unwrap();
        let losses: Vec<f64> = out.trace.rows.iter().map(|r| r.train_loss).collect();
        assert_eq!(losses.len(), 41);
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
        let first = &out.trace.rows[0];
        assert_eq!(first.w_fro, Some(0.0));
        assert_eq!(first.ck_fro, Some(0.0));
        assert_eq!(out.trace.last().ck_top.len(), TOP_EIGENVALUES);
        assert!(out.trace.last().test_r2.is_some());
    }

    #[test]
    fn full_batch_sgd_matches_gd() {
        let (model, train, _) = setup(20, 6, 15);
        let gd = TrainConfig::new(OptimizerSpec::gd(0.7), 12);
        let sgd = TrainConfig::new(OptimizerSpec::sgd(0.7, 15), 12);
        let a = super::train(model.clone(), &train, None, &gd).unwrap();
        let b = super::train(model, &train, None, &sgd).unwrap();
        assert_eq!(a.model.w, b.model.w);
        assert_eq!(a.model.v, b.model.v);
        assert_eq!(a.trace.rows, b.trace.rows);
    }

    #[test]
    fn deterministic_minibatch_runs() {
        let (model, train, test) = setup(20, 6, 33);
        let mut cfg = TrainConfig::new(OptimizerSpec::sgd(0.3, 8), 5);
        cfg.metrics = MetricLevel::Spectral;
        let a = super::train(model.clone(), &train, Some(&test), &cfg).unwrap();
        let b = super::train(model.clone(), &train, Some(&test), &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.last().steps, 5 * 5);
        cfg.seed = 1;
        let c = super::train(model, &train, Some(&test), &cfg).unwrap();
        assert_ne!(a.model.w, c.model.w);
    }

    #[test]
    fn record_schedule_includes_final_epoch() {
        let (model, train, _) = setup(10, 4, 12);
        let mut cfg = TrainConfig::new(OptimizerSpec::adam(0.01).with_batch(Some(4)), 7);
        cfg.record_every = 3;
        let out = super::train(model, &train, None, &cfg).unwrap();
        let epochs: Vec<usize> = out.trace.rows.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![0, 3, 6, 7]);
        assert!(out.trace.hit_cap());
    }

    #[test]
    fn stop_loss_ends_early() {
        let (model, train, _) = setup(40, 5, 10);
        let mut cfg = TrainConfig::new(OptimizerSpec::gd(2.0), 5000);
        cfg.stop_loss = 1e-3;
        cfg.record_every = 1000;
        let out = super::train(model, &train, None, &cfg).unwrap();
        assert_eq!(out.trace.stop_reason, StopReason::StopLoss);
        assert!(out.trace.last().train_loss < 1e-3);
        assert_eq!(out.trace.last().epoch, out.trace.epochs_run);
    }

    #[test]
    fn huge_step_diverges() {
        let (model, train, _) = setup(10, 4, 12);
        let cfg = TrainConfig::new(OptimizerSpec::gd(1e9), 50);
        let err = super::train(model, &train, None, &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err:?}");
    }

    #[test]
    fn first_layer_only_keeps_v() {
        let (model, train, _) = setup(10, 4, 12);
        let mut cfg = TrainConfig::new(OptimizerSpec::gd(0.5), 3);
        cfg.train_layers = TrainLayers::FirstOnly;
        let out = super::train(model.clone(), &train, None, &cfg).unwrap();
        assert_eq!(out.model.v, model.v);
        assert_ne!(out.model.w, model.w);
    }

    #[test]
    fn switch_applies_in_training() {
        let (model, train, _) = setup(10, 4, 12);
        let spec = OptimizerSpec::adam(0.01).with_batch(Some(4)).then(2, OptimizerSpec::sgd(0.1, 12));
        let cfg = TrainConfig::new(spec, 4);
        let out = super::train(model, &train, None, &cfg).unwrap();
        assert_eq!(out.trace.last().steps, 2 * 3 + 2);
    }

    #[test]
    fn csv_shape() {
        let (model, train, test) = setup(10, 4, 12);
        let mut cfg = TrainConfig::new(OptimizerSpec::gd(0.1), 2);
        cfg.metrics = MetricLevel::Kernels;
        let out = super::train(model, &train, Some(&test), &cfg).unwrap();
        let mut buf = Vec::new();
        out.trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        let width = TraceRow::columns().len();
        assert!(lines.iter().all(|l| l.split(',').count() == width));
        assert_eq!(out.trace.header()["columns"].as_array().unwrap().len(), width);
    }
}
