//! Dueling Q-network over a state and a finite set of candidate actions:
//! `Q(s, a) = V(s) + A(s, a) − mean_{c ∈ C} A(s, c)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Activation, FeedForwardNet, Gradients};
use crate::rng;

/// One-hidden-layer advantage head on `concat(h, a)`. The first layer is
/// split into its state and action blocks so the state block is applied once
/// per state, not once per candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageHead {
    pub feature_dim: usize,
    pub action_dim: usize,
    pub hidden: usize,
    /// `w_h (k×h) | w_a (k×d) | b (k) | w_o (k) | b_o`, row-major.
    pub params: Vec<f64>,
}

struct HeadCache {
    pre: Vec<Vec<f64>>,
}

impl AdvantageHead {
    fn new(feature_dim: usize, action_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = rng::stream(&[seed, 0xADA]);
        let fan_in = (feature_dim + action_dim) as f64;
        let mut params = Vec::with_capacity(hidden * (feature_dim + action_dim + 2) + 1);
        for _ in 0..hidden * (feature_dim + action_dim) {
            params.push(rng.sample::<f64, _>(StandardNormal) * (2.0 / fan_in).sqrt());
        }
        params.extend(std::iter::repeat_n(0.0, hidden));
        for _ in 0..hidden {
            params.push(rng.sample::<f64, _>(StandardNormal) * (1.0 / hidden as f64).sqrt());
        }
        params.push(0.0);
        AdvantageHead { feature_dim, action_dim, hidden, params }
    }

    fn offsets(&self) -> [usize; 4] {
        let (k, h, d) = (self.hidden, self.feature_dim, self.action_dim);
        let wa = k * h;
        let b = wa + k * d;
        let wo = b + k;
        [wa, b, wo, wo + k]
    }

    fn forward(&self, h: &[f64], actions: &[&[f64]]) -> (Vec<f64>, HeadCache) {
        let (k, hd, d) = (self.hidden, self.feature_dim, self.action_dim);
        let [wa, b, wo, bo] = self.offsets();
        let p = &self.params;
        let u: Vec<f64> = (0..k)
            .map(|r| p[b + r] + (0..hd).map(|c| p[r * hd + c] * h[c]).sum::<f64>())
            .collect();
        let mut pre = Vec::with_capacity(actions.len());
        let out = actions
            .iter()
            .map(|a| {
                let z: Vec<f64> = (0..k)
                    .map(|r| u[r] + (0..d).map(|c| p[wa + r * d + c] * a[c]).sum::<f64>())
                    .collect();
                let y = p[bo] + (0..k).map(|r| p[wo + r] * z[r].max(0.0)).sum::<f64>();
                pre.push(z);
                y
            })
            .collect();
        (out, HeadCache { pre })
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂h`.
    fn backward(&self, h: &[f64], actions: &[&[f64]], cache: &HeadCache, up: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (k, hd, d) = (self.hidden, self.feature_dim, self.action_dim);
        let [wa, b, wo, bo] = self.offsets();
        let p = &self.params;
        let mut sum_dz = vec![0.0; k];
        for ((a, z), &g) in actions.iter().zip(&cache.pre).zip(up) {
            if g == 0.0 {
                continue;
            }
            grad[bo] += g;
            for r in 0..k {
                if z[r] > 0.0 {
                    grad[wo + r] += g * z[r];
                    let dz = g * p[wo + r];
                    sum_dz[r] += dz;
                    for c in 0..d {
                        grad[wa + r * d + c] += dz * a[c];
                    }
                }
            }
        }
        let mut dh = vec![0.0; hd];
        for r in 0..k {
            grad[b + r] += sum_dz[r];
            for c in 0..hd {
                grad[r * hd + c] += sum_dz[r] * h[c];
                dh[c] += sum_dz[r] * p[r * hd + c];
            }
        }
        dh
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuelingQNet {
    pub state_dim: usize,
    pub action_dim: usize,
    pub trunk: FeedForwardNet,
    pub value: FeedForwardNet,
    pub advantage: AdvantageHead,
}

/// Per-state quantities of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct QOutput {
    pub value: f64,
    pub advantages: Vec<f64>,
    pub q: Vec<f64>,
}

/// `Q_c = V + A_c − mean(A)`.
pub fn dueling_q(value: f64, advantages: &[f64]) -> Result<Vec<f64>> {
    if advantages.is_empty() {
        return Err(Error::InvalidInput("empty candidate set".into()));
    }
    let mean = advantages.iter().sum::<f64>() / advantages.len() as f64;
    Ok(advantages.iter().map(|a| value + a - mean).collect())
}

impl DuelingQNet {
    pub fn new(state_dim: usize, action_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if state_dim == 0 || action_dim == 0 || hidden == 0 {
            return Err(Error::Config("q-network sizes must be positive".into()));
        }
        Ok(DuelingQNet {
            state_dim,
            action_dim,
            trunk: FeedForwardNet::new(&[state_dim, hidden], &[Activation::Relu], seed)?,
            value: FeedForwardNet::new(&[hidden, 1], &[Activation::Identity], rng::derive_seed(&[seed, 1]))?,
            advantage: AdvantageHead::new(hidden, action_dim, hidden, rng::derive_seed(&[seed, 2])),
        })
    }

    pub fn num_params(&self) -> usize {
        self.trunk.num_params() + self.value.num_params() + self.advantage.params.len()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut p = self.trunk.params_flat();
        p.extend(self.value.params_flat());
        p.extend(&self.advantage.params);
        p
    }

    pub fn set_params_flat(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::Shape("q-network parameter count mismatch".into()));
        }
        let t = self.trunk.num_params();
        let v = self.value.num_params();
        self.trunk.set_params_flat(&p[..t])?;
        self.value.set_params_flat(&p[t..t + v])?;
        self.advantage.params.copy_from_slice(&p[t + v..]);
        Ok(())
    }

    fn check(&self, s: &[f64], candidates: &[&[f64]]) -> Result<()> {
        if s.len() != self.state_dim {
            return Err(Error::Shape(format!("state has length {}, expected {}", s.len(), self.state_dim)));
        }
        if candidates.is_empty() {
            return Err(Error::InvalidInput("empty candidate set".into()));
        }
        if candidates.iter().any(|a| a.len() != self.action_dim) {
            return Err(Error::Shape("candidate action length mismatch".into()));
        }
        Ok(())
    }

    pub fn evaluate(&self, s: &[f64], candidates: &[&[f64]]) -> Result<QOutput> {
        self.check(s, candidates)?;
        let h = self.trunk.forward(s)?;
        let value = self.value.forward(&h)?[0];
        let (advantages, _) = self.advantage.forward(&h, candidates);
        let q = dueling_q(value, &advantages)?;
        Ok(QOutput { value, advantages, q })
    }

    pub fn q_values(&self, s: &[f64], candidates: &[&[f64]]) -> Result<Vec<f64>> {
        Ok(self.evaluate(s, candidates)?.q)
    }

    /// Gradient of `Σ_i up_i · Q(s_i, candidates_i[taken_i])` with respect to
    /// all parameters, in [`DuelingQNet::params_flat`] order. Also returns the
    /// Q values of the taken actions.
    pub fn gradient(
        &self,
        states: &[&[f64]],
        candidates: &[Vec<&[f64]>],
        taken: &[usize],
        up: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = states.len();
        for (s, c) in states.iter().zip(candidates) {
            self.check(s, c)?;
        }
        let x = DMatrix::from_fn(n, self.state_dim, |i, j| states[i][j]);
        let tc = self.trunk.forward_batch(&x)?;
        let hmat = tc.output().clone();
        let vc = self.value.forward_batch(&hmat)?;
        let t_len = self.trunk.num_params();
        let v_len = self.value.num_params();
        let mut head_grad = vec![0.0; self.advantage.params.len()];
        let mut dh = DMatrix::zeros(n, hmat.ncols());
        let mut q_taken = Vec::with_capacity(n);
        for i in 0..n {
            let h: Vec<f64> = hmat.row(i).iter().copied().collect();
            let (adv, cache) = self.advantage.forward(&h, &candidates[i]);
            let q = dueling_q(vc.output()[(i, 0)], &adv)?;
            q_taken.push(q[taken[i]]);
            let m = adv.len() as f64;
            let g: Vec<f64> = (0..adv.len())
                .map(|c| up[i] * (f64::from(u8::from(c == taken[i])) - 1.0 / m))
                .collect();
            let d = self.advantage.backward(&h, &candidates[i], &cache, &g, &mut head_grad);
            for (c, v) in d.into_iter().enumerate() {
                dh[(i, c)] += v;
            }
        }
        let vup = DMatrix::from_fn(n, 1, |i, _| up[i]);
        let (vg, dh_v): (Gradients, DMatrix<f64>) = self.value.backward_batch(&vc, &vup)?;
        dh += dh_v;
        let (tg, _) = self.trunk.backward_batch(&tc, &dh)?;
        let mut grad = Vec::with_capacity(t_len + v_len + head_grad.len());
        grad.extend(tg.flatten());
        grad.extend(vg.flatten());
        grad.extend(head_grad);
        Ok((grad, q_taken))
    }
}
