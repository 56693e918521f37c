//! Kernel quantile regression with τ-matching.
//!
//! Contexts `(s, a, L)` are standardized and projected onto their top
//! principal components. A query context gets Gaussian weights over the
//! stored training contexts; the weighted empirical CDF of each target
//! dimension gives `τ̂` for a factual outcome, and its left-continuous inverse
//! gives the counterfactual outcome at the same level.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::scm::scaler;
use crate::error::{Error, Result};
use crate::numcore::Pca;
use crate::rng;

pub const MIN_WEIGHT: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthRule {
    /// Median pairwise distance of the sampled projected contexts.
    Median,
    /// Median scaled by `n^{−1/(d+4)}`.
    ScaledMedian,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KqrConfig {
    pub dims: usize,
    pub bandwidth: BandwidthRule,
    pub bandwidth_sample: usize,
    pub seed: u64,
}

impl Default for KqrConfig {
    fn default() -> Self {
        KqrConfig {
            dims: 16,
            bandwidth: BandwidthRule::ScaledMedian,
            bandwidth_sample: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KqrEngine {
    pub context_mean: Vec<f64>,
    pub context_scale: Vec<f64>,
    pub pca: Pca,
    pub bandwidth: f64,
    /// Projected training contexts, one row each.
    pub contexts: Vec<Vec<f64>>,
    /// Training targets, one row each.
    pub targets: Vec<Vec<f64>>,
    /// Per target dimension, training indices sorted by `(value, index)`.
    pub order: Vec<Vec<u32>>,
}

fn distance2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl KqrEngine {
    /// `contexts[i]` is `concat(s, a, L)` of training step `i`.
    pub fn fit(contexts: &[Vec<f64>], targets: &[Vec<f64>], config: &KqrConfig) -> Result<KqrEngine> {
        let n = contexts.len();
        if n < 2 || targets.len() != n {
            return Err(Error::InsufficientData("kqr needs >= 2 matched samples".into()));
        }
        let p = contexts[0].len();
        let q = targets[0].len();
        if contexts.iter().any(|c| c.len() != p) || targets.iter().any(|t| t.len() != q) || p == 0 || q == 0 {
            return Err(Error::Shape("kqr rows have inconsistent lengths".into()));
        }
        if config.dims == 0 {
            return Err(Error::Config("kqr dims must be positive".into()));
        }
        let refs: Vec<&[f64]> = contexts.iter().map(Vec::as_slice).collect();
        let (context_mean, context_scale) = scaler(&refs);
        let standardized = DMatrix::from_fn(n, p, |i, j| (contexts[i][j] - context_mean[j]) / context_scale[j]);
        let pca = Pca::fit(&standardized, config.dims.min(p))?;
        let projected: Vec<Vec<f64>> = standardized
            .row_iter()
            .map(|r| pca.transform(&r.iter().copied().collect::<Vec<_>>()))
            .collect();

        let bandwidth = match config.bandwidth {
            BandwidthRule::Fixed(h) => h,
            rule => {
                let m = config.bandwidth_sample.min(n).max(2);
                let mut rng = rng::stream(&[config.seed, 0xB4D]);
                let mut idx = sample(&mut rng, n, m).into_vec();
                idx.sort_unstable();
                let mut dists = Vec::with_capacity(m * (m - 1) / 2);
                for (k, &i) in idx.iter().enumerate() {
                    for &j in &idx[k + 1..] {
                        dists.push(distance2(&projected[i], &projected[j]).sqrt());
                    }
                }
                let med = median(dists);
                match rule {
                    BandwidthRule::ScaledMedian => med * (n as f64).powf(-1.0 / (pca.dim() as f64 + 4.0)),
                    _ => med,
                }
            }
        };
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Numeric(format!("kqr bandwidth {bandwidth} is not positive")));
        }
        let order = (0..q)
            .map(|j| {
                let mut o: Vec<u32> = (0..n as u32).collect();
                o.sort_by(|&a, &b| {
                    targets[a as usize][j]
                        .total_cmp(&targets[b as usize][j])
                        .then(a.cmp(&b))
                });
                o
            })
            .collect();
        Ok(KqrEngine {
            context_mean,
            context_scale,
            pca,
            bandwidth,
            contexts: projected,
            targets: targets.to_vec(),
            order,
        })
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn project(&self, context: &[f64]) -> Result<Vec<f64>> {
        if context.len() != self.context_mean.len() {
            return Err(Error::Shape(format!(
                "kqr context has length {}, expected {}",
                context.len(),
                self.context_mean.len()
            )));
        }
        let x: Vec<f64> = context
            .iter()
            .enumerate()
            .map(|(j, v)| (v - self.context_mean[j]) / self.context_scale[j])
            .collect();
        Ok(self.pca.transform(&x))
    }

    pub fn weights(&self, context: &[f64]) -> Result<Vec<f64>> {
        let z = self.project(context)?;
        let h2 = 2.0 * self.bandwidth * self.bandwidth;
        let w: Vec<f64> = self.contexts.iter().map(|c| (-distance2(&z, c) / h2).exp()).collect();
        if w.iter().all(|&x| x < MIN_WEIGHT) {
            return Err(Error::Numeric("kqr query is outside the training support".into()));
        }
        Ok(w)
    }

    /// Cumulative weights of dimension `j` in sorted target order.
    fn cumulative(&self, w: &[f64], j: usize) -> Vec<f64> {
        let mut acc = 0.0;
        self.order[j]
            .iter()
            .map(|&i| {
                acc += w[i as usize];
                acc
            })
            .collect()
    }

    fn clamp_tau(&self, tau: f64) -> f64 {
        let n = self.len() as f64;
        tau.clamp(1.0 / (n + 1.0), n / (n + 1.0))
    }

    /// Weighted CDF level of `y` in each target dimension at `context`.
    pub fn tau(&self, context: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.order.len() {
            return Err(Error::Shape("kqr outcome has the wrong length".into()));
        }
        let w = self.weights(context)?;
        Ok((0..y.len())
            .map(|j| {
                let cum = self.cumulative(&w, j);
                let total = cum[cum.len() - 1];
                let below = self.order[j].partition_point(|&i| self.targets[i as usize][j] <= y[j]);
                let f = if below == 0 { 0.0 } else { cum[below - 1] / total };
                self.clamp_tau(f)
            })
            .collect())
    }

    /// Left-continuous weighted quantile `inf{y : F(y) ≥ τ}` per dimension.
    pub fn quantile(&self, context: &[f64], tau: &[f64]) -> Result<Vec<f64>> {
        if tau.len() != self.order.len() {
            return Err(Error::Shape("kqr tau has the wrong length".into()));
        }
        let w = self.weights(context)?;
        Ok((0..tau.len())
            .map(|j| {
                let t = self.clamp_tau(tau[j]);
                let cum = self.cumulative(&w, j);
                let total = cum[cum.len() - 1];
                let k = cum.partition_point(|&c| c / total < t).min(cum.len() - 1);
                self.targets[self.order[j][k] as usize][j]
            })
            .collect())
    }
}

pub fn context(s: &[f64], a: &[f64], l: &[f64]) -> Vec<f64> {
    s.iter().chain(a).chain(l).copied().collect()
}

/// `τ̂` of a factual step `(s, a, L) → y`.
pub fn kqr_tau(engine: &KqrEngine, s: &[f64], a: &[f64], l: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    engine.tau(&context(s, a, l), y)
}

/// Counterfactual next state at level `τ̂` under action `a′`.
pub fn kqr_counterfactual(engine: &KqrEngine, s: &[f64], a_prime: &[f64], l: &[f64], tau: &[f64]) -> Result<Vec<f64>> {
    engine.quantile(&context(s, a_prime, l), tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn additive(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut rng = crate::rng::stream(&[seed, 44]);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let x: f64 = rng.sample(StandardNormal);
            let a = f64::from(rng.random_range(0..2u8));
            let e: f64 = rng.sample(StandardNormal);
            xs.push(vec![x, a]);
            ys.push(vec![x + 2.0 * a + e]);
        }
        (xs, ys)
    }

    #[test]
    fn in_sample_replay_is_exact() {
        let (x, y) = additive(400, 1);
        let e = KqrEngine::fit(&x, &y, &KqrConfig::default()).unwrap();
        for i in 0..x.len() {
            let tau = e.tau(&x[i], &y[i]).unwrap();
            assert_eq!(e.quantile(&x[i], &tau).unwrap(), y[i]);
        }
    }

    #[test]
    fn tau_is_clamped_and_monotone() {
        let (x, y) = additive(300, 2);
        let e = KqrEngine::fit(&x, &y, &KqrConfig::default()).unwrap();
        let n = 300.0;
        let lo = e.tau(&x[0], &[-100.0]).unwrap()[0];
        let hi = e.tau(&x[0], &[100.0]).unwrap()[0];
        assert_eq!(lo, 1.0 / (n + 1.0));
        assert_eq!(hi, n / (n + 1.0));
        let mut prev = 0.0;
        for k in -40..=40 {
            let t = e.tau(&x[0], &[k as f64 / 10.0]).unwrap()[0];
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn lower_clamp_returns_minimum_under_flat_weights() {
        let (x, y) = additive(200, 3);
        let flat = KqrConfig { bandwidth: BandwidthRule::Fixed(1e3), ..KqrConfig::default() };
        let e = KqrEngine::fit(&x, &y, &flat).unwrap();
        let q = e.quantile(&x[5], &[0.0]).unwrap()[0];
        let min = y.iter().map(|r| r[0]).fold(f64::INFINITY, f64::min);
        assert_eq!(q, min);
    }

    #[test]
    fn weighted_median_sits_at_one_half() {
        let (x, y) = additive(1000, 4);
        let e = KqrEngine::fit(&x, &y, &KqrConfig::default()).unwrap();
        let q = e.quantile(&x[0], &[0.5]).unwrap();
        let t = e.tau(&x[0], &q).unwrap()[0];
        assert!((t - 0.5).abs() <= 0.05, "{t}");
    }

    #[test]
    fn additive_scm_counterfactual() {
        let (x, y) = additive(5000, 5);
        let e = KqrEngine::fit(&x, &y, &KqrConfig::default()).unwrap();
        let tau = kqr_tau(&e, &[0.0], &[0.0], &[], &[0.5]).unwrap();
        let cf = kqr_counterfactual(&e, &[0.0], &[1.0], &[], &tau).unwrap()[0];
        assert!((cf - 2.5).abs() <= 0.1, "{cf}");
    }

    #[test]
    fn far_query_is_out_of_support() {
        let (x, y) = additive(100, 6);
        let e = KqrEngine::fit(&x, &y, &KqrConfig { bandwidth: BandwidthRule::Fixed(0.01), ..KqrConfig::default() }).unwrap();
        assert!(matches!(e.tau(&[1e6, 0.0], &[0.0]), Err(Error::Numeric(_))));
        assert!(e.tau(&[0.0], &[0.0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn tau_bounds_and_monotonicity(seed in 0u64..1000, y0 in -5.0f64..5.0, dy in 0.0f64..3.0, i in 0usize..80) {
                let (x, y) = additive(80, seed);
                let e = KqrEngine::fit(&x, &y, &KqrConfig::default()).unwrap();
                let a = e.tau(&x[i], &[y0]).unwrap()[0];
                let b = e.tau(&x[i], &[y0 + dy]).unwrap()[0];
                prop_assert!(a <= b);
                prop_assert!((1.0 / 81.0..=80.0 / 81.0).contains(&a));
            }
        }
    }
}
