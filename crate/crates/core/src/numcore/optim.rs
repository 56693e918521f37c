//! First-order optimizers and a generic minibatch training loop.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::nn::{FeedForwardNet, Gradients};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub l2_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 64,
            epochs: 100,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            l2_penalty: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if self.l2_penalty < 0.0 {
            return Err(Error::Config("l2 penalty must be non-negative".into()));
        }
        Ok(())
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    l2: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, l2: f64, num_params: usize) -> Self {
        Optimizer {
            kind,
            lr,
            l2,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn from_config(cfg: &TrainConfig, num_params: usize) -> Self {
        Self::new(cfg.optimizer, cfg.learning_rate, cfg.l2_penalty, num_params)
    }

    /// One update of `params` given `grad`; the l2 penalty applies to all
    /// entries of `params`.
    pub fn step_flat(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * (g + self.l2 * *p);
                }
            }
            OptimizerKind::Adam => {
                let b1t = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let b2t = 1.0 - ADAM_BETA2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grad[i] + self.l2 * params[i];
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let mh = self.m[i] / b1t;
                    let vh = self.v[i] / b2t;
                    params[i] -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
                }
            }
        }
    }

    pub fn step(&mut self, net: &mut FeedForwardNet, grads: &Gradients) -> Result<()> {
        let mut p = net.params_flat();
        self.step_flat(&mut p, &grads.flatten());
        net.set_params_flat(&p)
    }
}

/// Gathers rows of `m` in the given order.
pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Shuffled minibatch training. `loss_fn(output, rows)` returns the mean
/// batch loss and `∂loss/∂output`. Returns the mean loss of every epoch.
pub fn train_minibatch<F>(
    net: &mut FeedForwardNet,
    inputs: &DMatrix<f64>,
    cfg: &TrainConfig,
    mut loss_fn: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&DMatrix<f64>, &[usize]) -> (f64, DMatrix<f64>),
{
    cfg.validate()?;
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::InsufficientData("no training rows".into()));
    }
    let mut opt = Optimizer::from_config(cfg, net.num_params());
    let mut rng = rng::stream(&[cfg.seed, 0x7EA1]);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = select_rows(inputs, chunk);
            let cache = net.forward_batch(&xb)?;
            let (loss, up) = loss_fn(cache.output(), chunk);
            if !loss.is_finite() {
                return Err(Error::Numeric("training loss diverged".into()));
            }
            total += loss * chunk.len() as f64;
            let (grads, _) = net.backward_batch(&cache, &up)?;
            opt.step(net, &grads)?;
        }
        trace.push(total / n as f64);
    }
    net.set_train_config(cfg.clone());
    Ok(trace)
}
