//! Donation prediction (DDP), the sparse terminal step reward, and
//! cumulative reward series.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::corpus::{transition_windows, Corpus, Dialogue, Role, DONATION_CAP};
use crate::error::{Error, Result};

pub const POOLING: &str = "mean-ee+mean-er+final-ee/v1";
pub const MIN_DIALOGUES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpModel {
    pub pooling: String,
    pub embedding_dim: usize,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub ridge: f64,
    pub clip: bool,
    pub seed: u64,
}

/// `mean(EE) ⊕ mean(ER) ⊕ last EE`; missing roles pool to zeros.
pub fn pooled_features(d: &Dialogue, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; 3 * dim];
    let mut counts = [0usize; 2];
    for t in &d.turns {
        let (slot, c) = match t.role {
            Role::EE => (0, 0),
            Role::ER => (dim, 1),
        };
        counts[c] += 1;
        for (o, v) in out[slot..slot + dim].iter_mut().zip(&t.embedding) {
            *o += v;
        }
    }
    for (c, slot) in [(0usize, 0usize), (1, dim)] {
        if counts[c] > 0 {
            out[slot..slot + dim].iter_mut().for_each(|v| *v /= counts[c] as f64);
        }
    }
    if let Some(last) = d.turns.iter().rev().find(|t| t.role == Role::EE) {
        out[2 * dim..].copy_from_slice(&last.embedding);
    }
    out
}

/// Closed-form ridge regression of donations on pooled features, with an
/// unpenalized intercept.
pub fn train_ddp(corpus: &Corpus, ridge: f64, seed: u64) -> Result<DdpModel> {
    let n = corpus.dialogues.len();
    if n < MIN_DIALOGUES {
        return Err(Error::InsufficientData(format!("ddp needs >= {MIN_DIALOGUES} dialogues, got {n}")));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Config("ridge must be a non-negative number".into()));
    }
    let dim = corpus.embedding_dim;
    let p = 3 * dim;
    let rows: Vec<Vec<f64>> = corpus.dialogues.iter().map(|d| pooled_features(d, dim)).collect();
    let y: Vec<f64> = corpus.dialogues.iter().map(|d| d.donation_ee.clamp(0.0, DONATION_CAP)).collect();
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let x_mean = x.row_mean();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut xc = x.clone();
    for mut r in xc.row_iter_mut() {
        r -= &x_mean;
    }
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let gram = xc.transpose() * &xc + DMatrix::identity(p, p) * ridge;
    let rhs = xc.transpose() * yc;
    let w = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| gram.pseudo_inverse(1e-12).ok().map(|pinv| pinv * &rhs))
        .ok_or_else(|| Error::Numeric("ddp normal equations are singular".into()))?;
    let intercept = y_mean - x_mean.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>();
    Ok(DdpModel {
        pooling: POOLING.to_string(),
        embedding_dim: dim,
        weights: w.iter().copied().collect(),
        intercept,
        ridge,
        clip: true,
        seed,
    })
}

impl DdpModel {
    pub fn predict(&self, d: &Dialogue) -> f64 {
        let f = pooled_features(d, self.embedding_dim);
        let raw = self.intercept + f.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>();
        if self.clip {
            raw.clamp(0.0, DONATION_CAP)
        } else {
            raw
        }
    }
}

/// Reward of step `t` in a dialogue with `T` transitions: zero before the
/// last step, the donation prediction at `t = T − 1`.
pub fn step_reward(ddp: &DdpModel, d: &Dialogue, t: usize) -> Result<f64> {
    let horizon = transition_windows(d)?.len();
    if t >= horizon {
        return Err(Error::InvalidInput(format!("step {t} outside a {horizon}-step dialogue")));
    }
    Ok(if t + 1 == horizon { ddp.predict(d) } else { 0.0 })
}

pub fn cumulative(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(Error::Numeric("non-finite reward".into()));
    }
    let mut acc = 0.0;
    Ok(rewards
        .iter()
        .map(|r| {
            acc += r;
            acc
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeRewardSeries {
    pub rewards: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl CumulativeRewardSeries {
    pub fn from_rewards(rewards: Vec<f64>) -> Result<Self> {
        let cumulative = cumulative(&rewards)?;
        Ok(CumulativeRewardSeries { rewards, cumulative })
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,reward,cumulative\n");
        for (k, (r, c)) in self.rewards.iter().zip(&self.cumulative).enumerate() {
            s.push_str(&format!("{k},{r},{c}\n"));
        }
        s
    }
}

/// DDP predictions per dialogue and their running sum.
pub fn evaluate(ddp: &DdpModel, dialogues: &[Dialogue]) -> Result<CumulativeRewardSeries> {
    CumulativeRewardSeries::from_rewards(dialogues.iter().map(|d| ddp.predict(d)).collect())
}

/// Mean curve over several dialogue sets of equal size.
pub fn evaluate_mean(ddp: &DdpModel, sets: &[&[Dialogue]]) -> Result<CumulativeRewardSeries> {
    let Some(first) = sets.first() else {
        return CumulativeRewardSeries::from_rewards(Vec::new());
    };
    let m = first.len();
    if sets.iter().any(|s| s.len() != m) {
        return Err(Error::Shape("dialogue sets differ in size".into()));
    }
    let mut mean = vec![0.0; m];
    for set in sets {
        for (acc, d) in mean.iter_mut().zip(set.iter()) {
            *acc += ddp.predict(d);
        }
    }
    mean.iter_mut().for_each(|v| *v /= sets.len() as f64);
    CumulativeRewardSeries::from_rewards(mean)
}

/// Observed donations and their running sum.
pub fn factual_series(dialogues: &[Dialogue]) -> Result<CumulativeRewardSeries> {
    CumulativeRewardSeries::from_rewards(dialogues.iter().map(|d| d.donation_ee).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Turn;
    use crate::strategy::StrategyVocab;
    use rand::Rng;

    fn dialogue(id: usize, embs: Vec<Vec<f64>>, donation: f64) -> Dialogue {
        let turns = embs
            .into_iter()
            .enumerate()
            .map(|(i, e)| Turn {
                index: i,
                role: if i % 2 == 0 { Role::EE } else { Role::ER },
                text: String::new(),
                embedding: e,
                strategy: None,
                source: None,
            })
            .collect();
        Dialogue {
            id: format!("d{id}"),
            donation_ee: donation,
            ocean: None,
            counterfactual: false,
            turns,
        }
    }

    fn corpus(dialogues: Vec<Dialogue>) -> Corpus {
        Corpus::new(2, StrategyVocab::new(Role::EE, vec![]), StrategyVocab::new(Role::ER, vec![])).with_dialogues(dialogues)
    }

    fn linear_corpus(n: usize, seed: u64) -> Corpus {
        let mut rng = crate::rng::stream(&[seed]);
        let w = [0.8, -0.5, 0.3, 0.2, 1.1, -0.7];
        let ds = (0..n)
            .map(|i| {
                let embs: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
                let mut d = dialogue(i, embs, 0.0);
                let f = pooled_features(&d, 2);
                d.donation_ee = 5.0 + f.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                d
            })
            .collect();
        corpus(ds)
    }

    #[test]
    fn noiseless_linear_donations_are_recovered() {
        let train = linear_corpus(200, 1);
        let test = linear_corpus(100, 2);
        let m = train_ddp(&train, 1e-6, 0).unwrap();
        let pred: Vec<f64> = test.dialogues.iter().map(|d| m.predict(d)).collect();
        let y: Vec<f64> = test.dialogues.iter().map(|d| d.donation_ee).collect();
        let r2 = crate::numcore::regression_metrics(&pred, &y).unwrap().r2;
        assert!(r2 >= 0.99, "{r2}");
    }

    #[test]
    fn constant_donations_are_predicted_everywhere() {
        let mut c = linear_corpus(30, 3);
        for d in &mut c.dialogues {
            d.donation_ee = 2.5;
        }
        let m = train_ddp(&c, 1.0, 0).unwrap();
        for d in &linear_corpus(10, 4).dialogues {
            assert!((m.predict(d) - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn too_few_dialogues_error() {
        assert!(train_ddp(&linear_corpus(5, 5), 1.0, 0).is_err());
    }

    #[test]
    fn predictions_are_clipped() {
        let mut m = train_ddp(&linear_corpus(30, 6), 1.0, 0).unwrap();
        m.intercept = 100.0;
        assert_eq!(m.predict(&linear_corpus(1, 7).dialogues[0]), DONATION_CAP);
        m.intercept = -100.0;
        assert_eq!(m.predict(&linear_corpus(1, 7).dialogues[0]), 0.0);
    }

    #[test]
    fn within_role_permutation_leaves_prediction_unchanged() {
        let m = train_ddp(&linear_corpus(40, 8), 0.1, 0).unwrap();
        let a = dialogue(0, vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 1.0], vec![1.0, 1.0], vec![0.5, 0.5]], 0.0);
        // swap the first two EE turns and the two ER turns; the last EE stays
        let b = dialogue(0, vec![vec![3.0, 1.0], vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 2.0], vec![0.5, 0.5]], 0.0);
        assert_eq!(m.predict(&a), m.predict(&b));
    }

    #[test]
    fn step_rewards_are_terminal_only() {
        let c = linear_corpus(30, 9);
        let m = train_ddp(&c, 0.1, 0).unwrap();
        let d = &c.dialogues[0];
        assert_eq!(step_reward(&m, d, 0).unwrap(), 0.0);
        let total: f64 = (0..2).map(|t| step_reward(&m, d, t).unwrap()).sum();
        assert_eq!(total, m.predict(d));
        assert!(step_reward(&m, d, 2).is_err());
    }

    #[test]
    fn cumulative_sums() {
        assert_eq!(cumulative(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 3.0, 6.0]);
        assert!(cumulative(&[]).unwrap().is_empty());
        assert!(cumulative(&[1.0, f64::NAN]).is_err());
        let s = CumulativeRewardSeries::from_rewards(vec![0.5, 1.5]).unwrap();
        assert_eq!(s.total(), 2.0);
        assert!(s.to_csv().ends_with("1,1.5,2\n"));
    }

    #[test]
    fn mean_curve_averages_sets() {
        let c = linear_corpus(30, 10);
        let m = train_ddp(&c, 0.1, 0).unwrap();
        let a = &c.dialogues[..3];
        let b = &c.dialogues[3..6];
        let mean = evaluate_mean(&m, &[a, b]).unwrap();
        let ea = evaluate(&m, a).unwrap();
        let eb = evaluate(&m, b).unwrap();
        assert!((mean.total() - 0.5 * (ea.total() + eb.total())).abs() < 1e-12);
        assert!(evaluate(&m, &[]).unwrap().cumulative.is_empty());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn prefix_sums_are_exact(r in proptest::collection::vec(0.0f64..10.0, 0..50)) {
                let c = cumulative(&r).unwrap();
                prop_assert_eq!(c.len(), r.len());
                for k in 1..c.len() {
                    prop_assert_eq!(c[k], c[k - 1] + r[k]);
                    prop_assert!(c[k] >= c[k - 1]);
                }
            }
        }
    }
}
