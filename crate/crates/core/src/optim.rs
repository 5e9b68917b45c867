//! GD, mini-batch SGD with optional momentum, Adam and AdaGrad, plus a single
//! optional switch to a second optimizer after a fixed number of epochs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradients, ModelState};
use crate::scalar::Scalar;

pub const DEFAULT_BATCH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Gd,
    Sgd,
    Adam,
    Adagrad,
}

/// Fields irrelevant to `kind` are carried but ignored, so every key of the
/// schema is always present for overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Mini-batch size for sgd/adam/adagrad; `null` means full batch.
    #[serde(default = "default_batch")]
    pub batch: Option<usize>,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub switch: Option<PhaseSwitch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSwitch {
    pub after_epochs: usize,
    pub optimizer: Box<OptimizerSpec>,
}

fn default_batch() -> Option<usize> {
    Some(DEFAULT_BATCH)
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl OptimizerSpec {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            batch: default_batch(),
            momentum: 0.0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            switch: None,
        }
    }

    pub fn gd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Gd, learning_rate)
    }

    pub fn sgd(learning_rate: f64, batch: usize) -> Self {
        Self {
            batch: Some(batch),
            ..Self::new(OptimizerKind::Sgd, learning_rate)
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn adagrad(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adagrad, learning_rate)
    }

    pub fn with_batch(mut self, batch: Option<usize>) -> Self {
        self.batch = batch;
        self
    }

    pub fn then(mut self, after_epochs: usize, next: OptimizerSpec) -> Self {
        self.switch = Some(PhaseSwitch {
            after_epochs,
            optimizer: Box::new(next),
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be > 0", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} not in [0, 1)", self.momentum));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} = {b} not in (0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps {} must be > 0", self.eps));
        }
        if self.batch == Some(0) {
            return bad("batch must be ≥ 1".into());
        }
        if let Some(sw) = &self.switch {
            if sw.optimizer.switch.is_some() {
                return bad("only a single optimizer switch is supported".into());
            }
            sw.optimizer.validate()?;
        }
        Ok(())
    }

    /// Effective batch size on `n` samples.
    pub fn batch_size(&self, n: usize) -> usize {
        match self.kind {
            OptimizerKind::Gd => n,
            _ => self.batch.unwrap_or(n).min(n),
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Slot<T> {
    first: Vec<T>,
    second: Vec<T>,
}

/// Mutable optimizer state: buffers per parameter group plus the step count.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    base: OptimizerSpec,
    active: OptimizerSpec,
    switched: bool,
    steps: u64,
    total_steps: u64,
    slots: Vec<Slot<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(spec: &OptimizerSpec) -> Result<Self> {
        spec.validate()?;
        let mut active = spec.clone();
        active.switch = None;
        Ok(Self {
            base: spec.clone(),
            active,
            switched: false,
            steps: 0,
            total_steps: 0,
            slots: Vec::new(),
        })
    }

    pub fn active(&self) -> &OptimizerSpec {
        &self.active
    }

    /// Steps taken by the active phase.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Steps taken across both phases.
    pub fn steps_total(&self) -> u64 {
        self.total_steps
    }

    /// Moves to the second phase once `epoch` (0-based) reaches the switch point.
    /// The second optimizer starts from fresh buffers.
    pub fn start_epoch(&mut self, epoch: usize) {
        if self.switched {
            return;
        }
        if let Some(sw) = &self.base.switch {
            if epoch >= sw.after_epochs {
                self.active = (*sw.optimizer).clone();
                self.switched = true;
                self.steps = 0;
                self.slots.clear();
            }
        }
    }

    /// Applies one update to each parameter group. `grads` follow the descent
    /// convention, so plain GD is `θ ← θ + η·G`.
    pub fn update(&mut self, params: &mut [&mut [T]], grads: &[&[T]], epoch: usize) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension {
                context: "optimizer parameter groups",
                expected: params.len(),
                got: grads.len(),
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::Dimension {
                    context: "optimizer gradient length",
                    expected: p.len(),
                    got: g.len(),
                });
            }
        }
        if self.slots.len() < params.len() {
            self.slots.resize_with(params.len(), Slot::default);
        }
        self.steps += 1;
        self.total_steps += 1;
        let spec = &self.active;
        let lr = T::c(spec.learning_rate);
        let eps = T::c(spec.eps);
        for ((p, g), slot) in params.iter_mut().zip(grads).zip(&mut self.slots) {
            match spec.kind {
                OptimizerKind::Gd | OptimizerKind::Sgd if spec.momentum == 0.0 => {
                    for (pi, &gi) in p.iter_mut().zip(g.iter()) {
                        *pi += lr * gi;
                    }
                }
                OptimizerKind::Gd | OptimizerKind::Sgd => {
                    let mu = T::c(spec.momentum);
                    if slot.first.len() != p.len() {
                        slot.first = vec![T::zero(); p.len()];
                    }
                    for ((pi, &gi), vel) in p.iter_mut().zip(g.iter()).zip(&mut slot.first) {
                        *vel = mu * *vel + gi;
                        *pi += lr * *vel;
                    }
                }
                OptimizerKind::Adam => {
                    if slot.first.len() != p.len() {
                        slot.first = vec![T::zero(); p.len()];
                        slot.second = vec![T::zero(); p.len()];
                    }
                    let b1 = T::c(spec.beta1);
                    let b2 = T::c(spec.beta2);
                    let t = self.steps as i32;
                    let c1 = T::one() - b1.powi(t);
                    let c2 = T::one() - b2.powi(t);
                    for (((pi, &gi), m), s) in p
                        .iter_mut()
                        .zip(g.iter())
                        .zip(&mut slot.first)
                        .zip(&mut slot.second)
                    {
                        *m = b1 * *m + (T::one() - b1) * gi;
                        *s = b2 * *s + (T::one() - b2) * gi * gi;
                        *pi += lr * (*m / c1) / ((*s / c2).sqrt() + eps);
                    }
                }
                OptimizerKind::Adagrad => {
                    if slot.second.len() != p.len() {
                        slot.second = vec![T::zero(); p.len()];
                    }
                    for ((pi, &gi), s) in p.iter_mut().zip(g.iter()).zip(&mut slot.second) {
                        *s += gi * gi;
                        *pi += lr * gi / (s.sqrt() + eps);
                    }
                }
            }
            if p.iter().any(|x| !x.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    loss: f64::NAN,
                });
            }
        }
        Ok(())
    }

    pub fn step(&mut self, model: &mut ModelState<T>, grads: &Gradients<T>, epoch: usize) -> Result<()> {
        if grads.w.shape() != model.w.shape() {
            return Err(Error::Dimension {
                context: "first-layer gradient",
                expected: model.w.rows() * model.w.cols(),
                got: grads.w.rows() * grads.w.cols(),
            });
        }
        match &grads.v {
            Some(gv) => self.update(
                &mut [model.w.as_mut_slice(), &mut model.v],
                &[grads.w.as_slice(), gv],
                epoch,
            ),
            None => self.update(&mut [model.w.as_mut_slice()], &[grads.w.as_slice()], epoch),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_step(spec: &OptimizerSpec, theta: f64, g: f64) -> f64 {
        let mut opt = Optimizer::<f64>::new(spec).unwrap();
        let mut p = [theta];
        opt.update(&mut [&mut p], &[&[g]], 0).unwrap();
        p[0]
    }

    #[test]
    fn gd_on_square() {
        // L = θ², descent direction −2θ.
        assert!((one_step(&OptimizerSpec::gd(0.1), 1.0, -2.0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adaptive_first_step_magnitude() {
        for g in [-3.0, 1e-3, 0.5, 40.0] {
            let adam = one_step(&OptimizerSpec::adam(0.01), 0.0, g);
            let ada = one_step(&OptimizerSpec::adagrad(0.01), 0.0, g);
            let expected = 0.01 * g / (g.abs() + 1e-8);
            assert!((adam - expected).abs() < 1e-15);
            assert!((ada - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn momentum_accumulates() {
        let mut spec = OptimizerSpec::sgd(0.1, 4);
        spec.momentum = 0.5;
        let mut opt = Optimizer::<f64>::new(&spec).unwrap();
        let mut p = [0.0];
        opt.update(&mut [&mut p], &[&[1.0]], 0).unwrap();
        opt.update(&mut [&mut p], &[&[1.0]], 0).unwrap();
        assert!((p[0] - (0.1 + 0.15)).abs() < 1e-15);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut opt = Optimizer::<f64>::new(&OptimizerSpec::adam(0.05)).unwrap();
        let mut p = [3.0, -2.0];
        for _ in 0..2000 {
            let g = [-2.0 * p[0], -2.0 * p[1]];
            opt.update(&mut [&mut p], &[&g], 0).unwrap();
        }
        assert!(p[0].abs() < 1e-2 && p[1].abs() < 1e-2);
    }

    #[test]
    fn switch_changes_kind_and_resets() {
        let spec = OptimizerSpec::adam(0.09).then(4, OptimizerSpec::sgd(5e-4, 32));
        let mut opt = Optimizer::<f64>::new(&spec).unwrap();
        opt.start_epoch(3);
        assert_eq!(opt.active().kind, OptimizerKind::Adam);
        let mut p = [0.0];
        opt.update(&mut [&mut p], &[&[1.0]], 3).unwrap();
        opt.start_epoch(4);
        assert_eq!(opt.active().kind, OptimizerKind::Sgd);
        assert_eq!(opt.steps(), 0);
        assert_eq!(opt.active().batch_size(1000), 32);
    }

    #[test]
    fn invalid_specs() {
        let mut s = OptimizerSpec::sgd(0.1, 8);
        s.momentum = 1.0;
        assert!(s.validate().is_err());
        assert!(OptimizerSpec::gd(0.0).validate().is_err());
        let mut a = OptimizerSpec::adam(0.1);
        a.beta2 = 1.0;
        assert!(a.validate().is_err());
        assert!(OptimizerSpec::sgd(0.1, 0).validate().is_err());
        let nested = OptimizerSpec::gd(0.1).then(1, OptimizerSpec::gd(0.1).then(2, OptimizerSpec::gd(0.1)));
        assert!(nested.validate().is_err());
    }

    #[test]
    fn non_finite_update_diverges() {
        let mut opt = Optimizer::<f64>::new(&OptimizerSpec::gd(1.0)).unwrap();
        let mut p = [0.0];
        let err = opt.update(&mut [&mut p], &[&[f64::NAN]], 7).unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 7, .. }));
    }

    #[test]
    fn serde_round_trip_with_defaults() {
        let spec: OptimizerSpec = serde_json::from_str(r#"{"kind":"sgd","learning_rate":22.0}"#).unwrap();
        assert_eq!(spec.batch, Some(DEFAULT_BATCH));
        assert_eq!(spec.momentum, 0.0);
        let back: OptimizerSpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        assert!(serde_json::from_str::<OptimizerSpec>(r#"{"kind":"sgd","learning_rate":1,"lr":2}"#).is_err());
        assert_eq!(OptimizerSpec::gd(1.0).batch_size(77), 77);
        assert_eq!(OptimizerSpec::sgd(1.0, 500).batch_size(77), 77);
    }
}
