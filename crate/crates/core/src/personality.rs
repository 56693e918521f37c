//! TP3M: OCEAN regression from the previous persuader action and the current
//! persuadee state.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, OceanVector, OCEAN_DIM};
use crate::error::{Error, Result};
use crate::numcore::{
    cca, regression_metrics, rows_to_matrix, squared_loss_batch, train_minibatch, Activation,
    FeedForwardNet, OptimizerKind, RegressionMetrics, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tp3mConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for Tp3mConfig {
    fn default() -> Self {
        Tp3mConfig {
            hidden: vec![1024, 256],
            train: TrainConfig {
                learning_rate: 1e-3,
                batch_size: 64,
                epochs: 30,
                seed: 0,
                optimizer: OptimizerKind::Adam,
                l2_penalty: 0.0,
            },
        }
    }
}

/// Inputs and targets are standardized internally; the scalers travel with
/// the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tp3m {
    pub embedding_dim: usize,
    pub net: FeedForwardNet,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_scale: Vec<f64>,
    pub loss_trace: Vec<f64>,
    pub n_pairs: usize,
}

/// `(concat(a_{t−1}, s_t), L)` rows for every EE turn of every dialogue with
/// OCEAN labels. The first EE turn pairs with a zero action.
pub fn training_pairs(corpus: &Corpus) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for d in &corpus.dialogues {
        let Some(ocean) = d.ocean else { continue };
        for (a, s) in d.action_state_pairs() {
            x.push(a.into_iter().chain(s).collect());
            y.push(ocean.0.to_vec());
        }
    }
    (x, y)
}

fn scaler(rows: &[Vec<f64>], p: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let scale = (0..p)
        .map(|j| {
            let v = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            if v.sqrt() > 1e-12 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn standardize(rows: &[Vec<f64>], mean: &[f64], scale: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), mean.len(), |i, j| (rows[i][j] - mean[j]) / scale[j])
}

pub fn train_tp3m(corpus: &Corpus, config: &Tp3mConfig) -> Result<Tp3m> {
    let (x, y) = training_pairs(corpus);
    if x.is_empty() {
        return Err(Error::InsufficientData("no OCEAN labels in corpus".into()));
    }
    let p = 2 * corpus.embedding_dim;
    let (input_mean, input_scale) = scaler(&x, p);
    let (target_mean, target_scale) = scaler(&y, OCEAN_DIM);
    let xm = standardize(&x, &input_mean, &input_scale);
    let ym = standardize(&y, &target_mean, &target_scale);

    let mut sizes = vec![p];
    sizes.extend(&config.hidden);
    sizes.push(OCEAN_DIM);
    let mut net = FeedForwardNet::mlp(&sizes, Activation::Relu, config.train.seed)?;
    let loss_trace = train_minibatch(&mut net, &xm, &config.train, |out, rows| {
        let target = crate::numcore::optim::select_rows(&ym, rows);
        squared_loss_batch(out, &target)
    })?;
    Ok(Tp3m {
        embedding_dim: corpus.embedding_dim,
        net,
        input_mean,
        input_scale,
        target_mean,
        target_scale,
        loss_trace,
        n_pairs: x.len(),
    })
}

impl Tp3m {
    /// Raw prediction; traits may fall outside the 1–5 inventory scale.
    pub fn predict_ocean(&self, a_prev: &[f64], s: &[f64]) -> Result<OceanVector> {
        let d = self.embedding_dim;
        if a_prev.len() != d || s.len() != d {
            return Err(Error::DimensionMismatch {
                line: 0,
                expected: d,
                got: if a_prev.len() != d { a_prev.len() } else { s.len() },
            });
        }
        let x: Vec<f64> = a_prev
            .iter()
            .chain(s)
            .enumerate()
            .map(|(j, v)| (v - self.input_mean[j]) / self.input_scale[j])
            .collect();
        let z = self.net.forward(&x)?;
        let mut out = [0.0; OCEAN_DIM];
        for k in 0..OCEAN_DIM {
            out[k] = z[k] * self.target_scale[k] + self.target_mean[k];
        }
        Ok(OceanVector(out))
    }

    /// Prediction clamped to the inventory scale.
    pub fn predict_inventory(&self, a_prev: &[f64], s: &[f64]) -> Result<OceanVector> {
        Ok(self.predict_ocean(a_prev, s)?.clamped().0)
    }

    /// Predictions and ground truth for every labeled pair of `corpus`.
    pub fn predict_corpus(&self, corpus: &Corpus) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let (x, y) = training_pairs(corpus);
        let d = self.embedding_dim;
        let pred = x
            .iter()
            .map(|r| self.predict_ocean(&r[..d], &r[d..]).map(|o| o.0.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok((pred, y))
    }
}

pub const MIN_CCA_DIALOGUES: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tp3mReport {
    /// Pooled over all five traits.
    pub overall: RegressionMetrics,
    pub per_trait: Vec<RegressionMetrics>,
    pub canonical_correlations: Vec<f64>,
}

pub fn evaluate(tp3m: &Tp3m, corpus: &Corpus, k: usize) -> Result<Tp3mReport> {
    let (pred, truth) = tp3m.predict_corpus(corpus)?;
    if pred.len() < 2 {
        return Err(Error::InsufficientData("need labeled pairs to evaluate".into()));
    }
    let flat_p: Vec<f64> = pred.iter().flatten().copied().collect();
    let flat_t: Vec<f64> = truth.iter().flatten().copied().collect();
    let per_trait = (0..OCEAN_DIM)
        .map(|j| {
            let p: Vec<f64> = pred.iter().map(|r| r[j]).collect();
            let t: Vec<f64> = truth.iter().map(|r| r[j]).collect();
            regression_metrics(&p, &t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Tp3mReport {
        overall: regression_metrics(&flat_p, &flat_t)?,
        per_trait,
        canonical_correlations: cca_report(tp3m, corpus, k)?,
    })
}

/// Top-`k` canonical correlations between predicted and true OCEAN matrices,
/// one row per labeled pair.
pub fn cca_report(tp3m: &Tp3m, corpus: &Corpus, k: usize) -> Result<Vec<f64>> {
    let labeled = corpus.dialogues.iter().filter(|d| d.ocean.is_some()).count();
    if labeled < MIN_CCA_DIALOGUES {
        return Err(Error::InsufficientData(format!("cca report needs >= {MIN_CCA_DIALOGUES} labeled dialogues, got {labeled}")));
    }
    let (pred, truth) = tp3m.predict_corpus(corpus)?;
    canonical_correlations(&pred, &truth, k)
}

pub fn canonical_correlations(pred: &[Vec<f64>], truth: &[Vec<f64>], k: usize) -> Result<Vec<f64>> {
    let x = rows_to_matrix(pred, OCEAN_DIM);
    let y = rows_to_matrix(truth, OCEAN_DIM);
    Ok(cca(&x, &y, k)?.correlations)
}
