//! Residual SCM: a regressor `g(s, a, L)` for the next state, with the
//! exogenous term abducted as the training residual.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corpus::OCEAN_DIM;
use crate::error::{Error, Result};
use crate::numcore::optim::select_rows;
use crate::numcore::{
    squared_loss_batch, train_minibatch, Activation, FeedForwardNet, OptimizerKind, TrainConfig,
};

pub const MIN_TRANSITIONS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScmConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for ScmConfig {
    fn default() -> Self {
        ScmConfig {
            hidden: vec![256],
            train: TrainConfig {
                learning_rate: 1e-3,
                batch_size: 64,
                epochs: 100,
                seed: 0,
                optimizer: OptimizerKind::Adam,
                l2_penalty: 0.0,
            },
        }
    }
}

/// One factual step with the trait vector used to explain it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmSample {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub l: Vec<f64>,
    pub s_next: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmModel {
    pub embedding_dim: usize,
    pub net: FeedForwardNet,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_scale: Vec<f64>,
    /// Per-dimension RMS of the training residuals.
    pub residual_rms: Vec<f64>,
    pub loss_trace: Vec<f64>,
}

pub(crate) fn scaler(rows: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let p = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..p).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let scale = (0..p)
        .map(|j| {
            let sd = (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn context(s: &[f64], a: &[f64], l: &[f64]) -> Vec<f64> {
    s.iter().chain(a).chain(l).copied().collect()
}

pub fn fit_scm(samples: &[ScmSample], config: &ScmConfig) -> Result<ScmModel> {
    if samples.len() < MIN_TRANSITIONS {
        return Err(Error::InsufficientData(format!(
            "scm needs >= {MIN_TRANSITIONS} transitions, got {}",
            samples.len()
        )));
    }
    let d = samples[0].s.len();
    for x in samples {
        if x.s.len() != d || x.a.len() != d || x.s_next.len() != d || x.l.len() != OCEAN_DIM {
            return Err(Error::Shape("scm sample lengths disagree".into()));
        }
    }
    let inputs: Vec<Vec<f64>> = samples.iter().map(|x| context(&x.s, &x.a, &x.l)).collect();
    let in_refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let out_refs: Vec<&[f64]> = samples.iter().map(|x| x.s_next.as_slice()).collect();
    let (input_mean, input_scale) = scaler(&in_refs);
    let (target_mean, target_scale) = scaler(&out_refs);
    let p = inputs[0].len();
    let xm = DMatrix::from_fn(samples.len(), p, |i, j| (inputs[i][j] - input_mean[j]) / input_scale[j]);
    let ym = DMatrix::from_fn(samples.len(), d, |i, j| {
        (samples[i].s_next[j] - target_mean[j]) / target_scale[j]
    });
    let mut sizes = vec![p];
    sizes.extend(&config.hidden);
    sizes.push(d);
    let mut net = FeedForwardNet::mlp(&sizes, Activation::Relu, config.train.seed)?;
    let loss_trace = train_minibatch(&mut net, &xm, &config.train, |out, rows| {
        squared_loss_batch(out, &select_rows(&ym, rows))
    })?;
    let mut model = ScmModel {
        embedding_dim: d,
        net,
        input_mean,
        input_scale,
        target_mean,
        target_scale,
        residual_rms: vec![0.0; d],
        loss_trace,
    };
    let mut sq = vec![0.0; d];
    for x in samples {
        for (acc, e) in sq.iter_mut().zip(model.abduct(&x.s, &x.a, &x.l, &x.s_next)?) {
            *acc += e * e;
        }
    }
    model.residual_rms = sq.iter().map(|v| (v / samples.len() as f64).sqrt()).collect();
    Ok(model)
}

impl ScmModel {
    fn check(&self, v: &[f64], what: &str) -> Result<()> {
        if v.len() != self.embedding_dim {
            return Err(Error::Shape(format!(
                "{what} has length {}, expected {}",
                v.len(),
                self.embedding_dim
            )));
        }
        Ok(())
    }

    /// `g(s, a, L)`.
    pub fn predict(&self, s: &[f64], a: &[f64], l: &[f64]) -> Result<Vec<f64>> {
        self.check(s, "state")?;
        self.check(a, "action")?;
        if l.len() != OCEAN_DIM {
            return Err(Error::Shape(format!("trait vector has length {}", l.len())));
        }
        let x: Vec<f64> = context(s, a, l)
            .iter()
            .enumerate()
            .map(|(j, v)| (v - self.input_mean[j]) / self.input_scale[j])
            .collect();
        let z = self.net.forward(&x)?;
        Ok(z.iter()
            .enumerate()
            .map(|(j, v)| v * self.target_scale[j] + self.target_mean[j])
            .collect())
    }

    /// `ε̂ = s_next − g(s, a, L)`.
    pub fn abduct(&self, s: &[f64], a: &[f64], l: &[f64], s_next: &[f64]) -> Result<Vec<f64>> {
        self.check(s_next, "next state")?;
        let g = self.predict(s, a, l)?;
        Ok(s_next.iter().zip(g).map(|(y, g)| y - g).collect())
    }

    /// `g(s, a′, L) + ε`.
    pub fn counterfactual(&self, s: &[f64], a_prime: &[f64], l: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
        self.check(eps, "noise")?;
        let g = self.predict(s, a_prime, l)?;
        Ok(g.iter().zip(eps).map(|(g, e)| g + e).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn linear_samples(n: usize, sigma: f64, seed: u64) -> Vec<ScmSample> {
        let mut rng = crate::rng::stream(&[seed]);
        (0..n)
            .map(|_| {
                let s: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
                let a: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
                let l: Vec<f64> = (0..5).map(|_| rng.random_range(1.0..5.0)).collect();
                let s_next = (0..3)
                    .map(|j| {
                        let e: f64 = rng.sample(StandardNormal);
                        0.5 * s[j] + a[(j + 1) % 3] - 0.2 * l[j] + sigma * e
                    })
                    .collect();
                ScmSample { s, a, l, s_next }
            })
            .collect()
    }

    fn cfg() -> ScmConfig {
        ScmConfig {
            hidden: vec![32],
            train: TrainConfig {
                learning_rate: 3e-3,
                epochs: 150,
                batch_size: 32,
                ..ScmConfig::default().train
            },
        }
    }

    #[test]
    fn factual_replay_is_exact() {
        let data = linear_samples(200, 0.3, 1);
        let m = fit_scm(&data, &cfg()).unwrap();
        for x in &data {
            let eps = m.abduct(&x.s, &x.a, &x.l, &x.s_next).unwrap();
            let back = m.counterfactual(&x.s, &x.a, &x.l, &eps).unwrap();
            for (u, v) in back.iter().zip(&x.s_next) {
                assert!((u - v).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn noiseless_linear_world_has_small_test_residuals() {
        let data = linear_samples(600, 0.0, 2);
        let m = fit_scm(&data[..500], &cfg()).unwrap();
        let mut sq = 0.0;
        for x in &data[500..] {
            sq += m.abduct(&x.s, &x.a, &x.l, &x.s_next).unwrap().iter().map(|e| e * e).sum::<f64>();
        }
        let rms = (sq / 300.0).sqrt();
        assert!(rms <= 0.05, "rms {rms}");
    }

    #[test]
    fn zero_noise_is_pure_prediction() {
        let data = linear_samples(100, 0.1, 3);
        let m = fit_scm(&data, &cfg()).unwrap();
        let x = &data[0];
        assert_eq!(m.counterfactual(&x.s, &x.a, &x.l, &[0.0; 3]).unwrap(), m.predict(&x.s, &x.a, &x.l).unwrap());
    }

    #[test]
    fn constant_target_gives_vanishing_residuals() {
        let mut data = linear_samples(100, 0.1, 4);
        for x in &mut data {
            x.s_next = vec![1.5, -2.0, 0.25];
        }
        let mut c = cfg();
        c.train.epochs = 400;
        let m = fit_scm(&data, &c).unwrap();
        assert!(m.residual_rms.iter().all(|r| *r < 0.02), "{:?}", m.residual_rms);
    }

    #[test]
    fn shuffled_targets_leave_target_scale_residuals() {
        let data = linear_samples(600, 0.0, 5);
        let mut shuffled = data.clone();
        let n = shuffled.len();
        for i in 0..n {
            shuffled[i].s_next = data[(i * 7 + 3) % n].s_next.clone();
        }
        let m = fit_scm(&shuffled[..500], &cfg()).unwrap();
        let test = &shuffled[500..];
        let mut sq = 0.0;
        for x in test {
            sq += m.abduct(&x.s, &x.a, &x.l, &x.s_next).unwrap().iter().map(|e| e * e).sum::<f64>();
        }
        let rms = (sq / (3 * test.len()) as f64).sqrt();
        let target_sd = {
            let v: Vec<f64> = test.iter().flat_map(|x| x.s_next.clone()).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
        };
        assert!(rms > 0.8 * target_sd, "rms {rms} vs sd {target_sd}");
    }

    #[test]
    fn too_few_and_mismatched_inputs_error() {
        let data = linear_samples(10, 0.1, 6);
        assert!(fit_scm(&data, &cfg()).is_err());
        let data = linear_samples(60, 0.1, 6);
        let m = fit_scm(&data, &cfg()).unwrap();
        assert!(m.counterfactual(&[0.0; 3], &[0.0; 2], &[3.0; 5], &[0.0; 3]).is_err());
        assert!(m.counterfactual(&[0.0; 3], &[0.0; 3], &[3.0; 5], &[0.0; 4]).is_err());
    }
}
