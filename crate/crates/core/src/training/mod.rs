//! Losses, optimizers, the learning-rate schedule and the training loop.

mod gradcheck;
mod loss;
mod optim;
pub mod smoke;

use std::sync::mpsc::sync_channel;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::ParamKind;
use crate::imaging::Dataset;
use crate::model::Network;
use crate::tensor::{Scalar, Tape, Tensor};

pub use gradcheck::{gradcheck_network, gradcheck_network_with, GradcheckEntry, GradcheckOptions, GradcheckReport};
pub use loss::{l1_loss, l2_loss, LossKind};
pub use optim::{
    adam_step, adamp_projection, adamp_step, project_radial, AdamHyper, OptimizerKind, OptimizerState, ADAMP_DELTA,
};

/// Batches prepared ahead of the optimizer.
const PREFETCH: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub batch: usize,
    pub patch: usize,
    pub epochs: usize,
    pub halve_every: usize,
    pub optimizer: OptimizerKind,
    pub betas: (f64, f64),
    pub eps: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub augment: bool,
    /// Overrides the default of ceil(dataset size / batch).
    pub iters_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 2e-4,
            batch: 16,
            patch: 48,
            epochs: 1000,
            halve_every: 200,
            optimizer: OptimizerKind::Adamp,
            betas: (0.9, 0.999),
            eps: 1e-8,
            seed: 0,
            loss: LossKind::L1,
            augment: true,
            iters_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if self.patch < 8 {
            return bad("patch must be at least 8");
        }
        if self.halve_every == 0 {
            return bad("halve_every must be at least 1");
        }
        if self.iters_per_epoch == Some(0) {
            return bad("iters_per_epoch must be at least 1");
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || self.eps <= 0.0 {
            return bad("betas must lie in [0, 1) and eps must be positive");
        }
        Ok(())
    }

    pub fn hyper(&self, lr: f64) -> AdamHyper {
        AdamHyper {
            lr,
            beta1: self.betas.0,
            beta2: self.betas.1,
            eps: self.eps,
        }
    }
}

/// Step schedule: `lr0 * 0.5^floor(epoch / halve_every)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * 0.5f64.powi((epoch / cfg.halve_every) as i32)
}

/// Optimizer bound to a network's parameter order. Under AdamP only
/// convolution weights are projection candidates.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    projected: Vec<bool>,
    state: OptimizerState<T>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(net: &Network<T>, kind: OptimizerKind) -> Self {
        let projected = net
            .params()
            .iter()
            .map(|p| kind == OptimizerKind::Adamp && p.kind == ParamKind::Weight)
            .collect();
        Optimizer {
            kind,
            projected,
            state: OptimizerState::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn state(&self) -> &OptimizerState<T> {
        &self.state
    }

    pub fn step(&mut self, net: &mut Network<T>, hyper: &AdamHyper) -> Result<()> {
        let mut params: Vec<&mut Tensor<T>> = net.params_mut().iter_mut().map(|p| &mut p.tensor).collect();
        adamp_step(&mut params, &self.projected, &mut self.state, hyper)
    }
}

/// One forward/backward/update on a prepared batch. Returns the loss.
pub fn train_step<T: Scalar>(
    net: &mut Network<T>,
    opt: &mut Optimizer<T>,
    lr_batch: Tensor<T>,
    hr_batch: Tensor<T>,
    loss: LossKind,
    hyper: &AdamHyper,
) -> Result<f64> {
    let mut tape = Tape::new();
    let x = tape.leaf(lr_batch, false);
    let y = tape.leaf(hr_batch, false);
    let (out, vars) = net.forward_tape(&mut tape, x, true)?;
    let l = loss.apply(&mut tape, out, y)?;
    let value = tape.value(l)?.item()?.as_f64();
    tape.backward(l)?;
    for (name, v) in vars {
        let g = tape
            .take_grad(v)?
            .ok_or_else(|| Error::Graph(format!("no gradient for {name}")))?;
        let p = net
            .params_mut()
            .get_mut(&name)
            .ok_or_else(|| Error::Graph(format!("unknown parameter {name}")))?;
        p.tensor.set_grad(g)?;
    }
    drop(tape);
    opt.step(net, hyper)?;
    Ok(value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss over the epoch's iterations.
    pub loss: f64,
    pub iterations: usize,
}

/// Receives each finished epoch, e.g. to log or checkpoint.
pub trait Reporter<T: Scalar> {
    fn epoch_end(&mut self, stats: &EpochStats, net: &Network<T>) -> Result<()>;
}

impl<T: Scalar, F: FnMut(&EpochStats, &Network<T>) -> Result<()>> Reporter<T> for F {
    fn epoch_end(&mut self, stats: &EpochStats, net: &Network<T>) -> Result<()> {
        self(stats, net)
    }
}

pub struct NoReport;

impl<T: Scalar> Reporter<T> for NoReport {
    fn epoch_end(&mut self, _: &EpochStats, _: &Network<T>) -> Result<()> {
        Ok(())
    }
}

pub fn iterations_per_epoch(data: &Dataset, cfg: &TrainConfig) -> usize {
    cfg.iters_per_epoch.unwrap_or_else(|| data.len().div_ceil(cfg.batch))
}

/// Trains `net` in place. Batches come from a producer thread through a
/// bounded queue; the random stream depends only on `cfg.seed`.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    data: &Dataset,
    cfg: &TrainConfig,
    reporter: &mut dyn Reporter<T>,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    if data.scale != net.config().scale {
        return Err(Error::Config(format!(
            "dataset scale {} does not match network scale {}",
            data.scale,
            net.config().scale
        )));
    }
    let iters = iterations_per_epoch(data, cfg);
    let total = iters * cfg.epochs;
    let mut opt = Optimizer::new(net, cfg.optimizer);

    std::thread::scope(|scope| {
        let (tx, rx) = sync_channel::<Result<(Tensor<T>, Tensor<T>)>>(PREFETCH);
        scope.spawn(move || {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            for _ in 0..total {
                let batch = data.sample_batch(cfg.batch, cfg.patch, cfg.augment, &mut rng);
                let failed = batch.is_err();
                if tx.send(batch).is_err() || failed {
                    break;
                }
            }
        });

        let mut curve = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let lr = lr_at(epoch, cfg);
            let hyper = cfg.hyper(lr);
            let mut sum = 0.0;
            for iteration in 0..iters {
                let (x, y) = rx
                    .recv()
                    .map_err(|_| Error::Dataset("batch producer stopped".into()))??;
                let loss = train_step(net, &mut opt, x, y, cfg.loss, &hyper).map_err(|e| match e {
                    Error::NonFinite { .. } => Error::Diverged {
                        epoch,
                        iteration,
                        detail: e.to_string(),
                    },
                    e => e,
                })?;
                sum += loss;
            }
            let stats = EpochStats {
                epoch,
                lr,
                loss: sum / iters as f64,
                iterations: iters,
            };
            reporter.epoch_end(&stats, net)?;
            curve.push(stats);
        }
        Ok(curve)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 2e-4);
        assert_eq!(lr_at(199, &cfg), 2e-4);
        assert_eq!(lr_at(200, &cfg), 1e-4);
        assert_eq!(lr_at(400, &cfg), 5e-5);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                lr0: 0.0,
                ..Default::default()
            },
            TrainConfig {
                batch: 0,
                ..Default::default()
            },
            TrainConfig {
                patch: 4,
                ..Default::default()
            },
            TrainConfig {
                betas: (1.0, 0.9),
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
