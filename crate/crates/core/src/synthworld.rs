//! Synthetic persuasion world with a known strategy graph, a linear-Gaussian
//! embedding SCM and an OCEAN-dependent donation map, plus exact oracles.
//!
//! State dynamics, with `L` the raw OCEAN vector:
//!
//! ```text
//! s_0     = C·L + P_ee·e(x_0) + σ·ξ
//! s_{t+1} = A·s_t + M(L)·a_t + C·L + ε_{t+1},   M(L) = B + Σ_k L_k·G_k
//! ε_{t+1} = P_ee·e(x_{t+1}) + σ·ξ
//! a_t     = P_er·e(y_t) + σ·ζ
//! donation = clip(b + u·s_T + v·(L − 3) + σ_d·η, 0, 10)
//! ```
//!
//! Each EE strategy is used at a Poisson rate driven by one OCEAN trait, so a
//! dialogue's EE turns are an iid draw from a softmax over `W·(L − 3)`. ER strategies
//! `y_t` are drawn uniformly among the graph children of `x_t`, except with
//! probability `off_graph_rate` where any ER strategy is drawn. `M(L)` is built
//! so that an ER strategy moves `u·s` most for persuadees whose traits make its
//! parent EE strategies likely; parentless ER strategies move it negatively.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::corpus::{clip_donation, Corpus, Dialogue, OceanVector, Role, Turn, DONATION_CAP};
use crate::error::{Error, Result};
use crate::grasp::{cpdag, Cpdag};
use crate::numcore::softmax;
use crate::rng;
use crate::strategy::StrategyVocab;

pub use crate::corpus::OCEAN_DIM;
pub const ENUMERATION_BUDGET: usize = 1_000_000;

/// Knobs from which a full [`WorldSpec`] is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldParams {
    pub n_ee_strategies: usize,
    pub n_er_strategies: usize,
    pub embedding_dim: usize,
    pub dialogue_length: usize,
    pub noise_sigma: f64,
    pub donation_noise: f64,
    pub off_graph_rate: f64,
    pub state_decay: f64,
    pub lift_scale: f64,
    pub trait_scale: f64,
    pub action_scale: f64,
    pub trait_preference: f64,
    pub base_gain: f64,
    pub personal_gain: f64,
    pub seed: u64,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            n_ee_strategies: 6,
            n_er_strategies: 8,
            embedding_dim: 16,
            dialogue_length: 4,
            noise_sigma: 0.05,
            donation_noise: 0.5,
            off_graph_rate: 0.2,
            state_decay: 0.5,
            lift_scale: 2.0,
            trait_scale: 1.0,
            action_scale: 0.3,
            trait_preference: 0.6,
            base_gain: 0.6,
            personal_gain: 0.6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmWeights {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    /// One `d × d` matrix per OCEAN dimension.
    pub g: Vec<Vec<Vec<f64>>>,
    pub ee_lift: Vec<Vec<f64>>,
    pub er_lift: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonationWeights {
    pub intercept: f64,
    pub state: Vec<f64>,
    pub ocean: Vec<f64>,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub n_ee_strategies: usize,
    pub n_er_strategies: usize,
    pub embedding_dim: usize,
    pub dialogue_length: usize,
    pub ee_names: Vec<String>,
    pub er_names: Vec<String>,
    /// `(ee index, er index)` pairs.
    pub true_edges: Vec<(usize, usize)>,
    /// `K_ee × 5` logits over centered OCEAN.
    pub ee_preference: Vec<Vec<f64>>,
    pub off_graph_rate: f64,
    pub scm_weights: ScmWeights,
    pub donation_weights: DonationWeights,
    pub noise_sigma: f64,
    pub seed: u64,
}

fn to_mat(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let c = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j])
}

fn from_mat(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize, sd: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

fn noise_vec(rng: &mut ChaCha8Rng, d: usize, sd: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

/// Default strategy graph: EE strategies `2j` and `2j+1` both cause ER
/// strategy `j`. ER strategies left without parents (at least `greeting` and
/// `off-task`) only occur off-graph.
pub fn default_edges(k_ee: usize, k_er: usize) -> Vec<(usize, usize)> {
    let effective = k_er.saturating_sub(2).max(1);
    let mut e: Vec<(usize, usize)> = (0..k_ee).map(|x| (x, (x / 2).min(effective - 1))).collect();
    e.sort_unstable();
    e
}

pub fn default_names(k_ee: usize, k_er: usize) -> (Vec<String>, Vec<String>) {
    let ee = (0..k_ee).map(|i| format!("ee{i}")).collect();
    let mut er: Vec<String> = (0..k_er.saturating_sub(2)).map(|i| format!("er{i}")).collect();
    er.push("greeting".into());
    er.push("off-task".into());
    (ee, er)
}

impl WorldSpec {
    pub fn from_params(p: &WorldParams) -> Result<WorldSpec> {
        if p.n_ee_strategies < 2 || p.n_er_strategies < 3 {
            return Err(Error::Config("world needs >= 2 EE and >= 3 ER strategies".into()));
        }
        if p.embedding_dim < p.n_er_strategies.max(p.n_ee_strategies) {
            return Err(Error::Config("embedding_dim must cover the strategy lifts".into()));
        }
        if p.dialogue_length == 0 || !(0.0..=1.0).contains(&p.off_graph_rate) || p.noise_sigma < 0.0 {
            return Err(Error::Config("invalid world parameters".into()));
        }
        let (d, ke, kr) = (p.embedding_dim, p.n_ee_strategies, p.n_er_strategies);
        let mut rng = rng::stream(&[p.seed, 0x3071D]);
        let sd = 1.0 / (d as f64).sqrt();
        let ee_lift = gaussian(&mut rng, d, ke, p.lift_scale * sd);
        let er_lift = gaussian(&mut rng, d, kr, p.lift_scale * sd);
        let c = gaussian(&mut rng, d, OCEAN_DIM, p.trait_scale * sd);
        let b_rand = gaussian(&mut rng, d, d, p.action_scale * sd);
        // EE strategy x < 5 is driven by trait x alone, so usage rates of
        // different EE strategies stay independent across persuadees.
        let pref = DMatrix::from_fn(ke, OCEAN_DIM, |x, k| if x == k { p.trait_preference } else { 0.0 });
        let u_dir = gaussian(&mut rng, d, 1, 1.0);
        let u = u_dir.column(0).normalize();
        let ocean_w: Vec<f64> = (0..OCEAN_DIM).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();

        let edges = default_edges(ke, kr);
        let mut parents = vec![Vec::new(); kr];
        for &(x, y) in &edges {
            parents[y].push(x);
        }
        // Γ[y,k]: how strongly trait k amplifies strategy y's push along u.
        let gamma = DMatrix::from_fn(kr, OCEAN_DIM, |y, k| {
            if parents[y].is_empty() {
                0.0
            } else {
                p.personal_gain * parents[y].iter().map(|&x| pref[(x, k)]).sum::<f64>()
                    / parents[y].len() as f64
            }
        });
        let g0: Vec<f64> = (0..kr)
            .map(|y| if parents[y].is_empty() { -p.base_gain } else { p.base_gain })
            .collect();
        let q_pinv = er_lift
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Numeric(format!("lift pseudo-inverse: {e}")))?;
        let uu = u.dot(&u);
        // u·B·P_er must equal g0 − 3·ΣΓ so that the centered gain is g0.
        let target_b = DMatrix::from_fn(1, kr, |_, y| g0[y] - 3.0 * gamma.row(y).sum());
        let current = u.transpose() * &b_rand * &er_lift;
        let b = &b_rand + (&u / uu) * (target_b - current) * &q_pinv;
        let g: Vec<DMatrix<f64>> = (0..OCEAN_DIM)
            .map(|k| (&u / uu) * gamma.column(k).transpose() * &q_pinv)
            .collect();
        let a = DMatrix::identity(d, d) * p.state_decay;

        // Intercept centers donations near the middle of the cap.
        let l_mid = DVector::from_element(OCEAN_DIM, 3.0);
        let mut m_mid = b.clone();
        for (k, gk) in g.iter().enumerate() {
            m_mid += gk * l_mid[k];
        }
        let a_bar = &er_lift * DVector::from_element(kr, 1.0 / kr as f64);
        let e_bar = &ee_lift * DVector::from_element(ke, 1.0 / ke as f64);
        let drive = &c * &l_mid + &m_mid * a_bar + e_bar;
        let s_star = (DMatrix::identity(d, d) - &a)
            .try_inverse()
            .ok_or_else(|| Error::Numeric("state decay makes I - A singular".into()))?
            * drive;
        let intercept = DONATION_CAP / 2.0 - u.dot(&s_star);

        let (ee_names, er_names) = default_names(ke, kr);
        Ok(WorldSpec {
            n_ee_strategies: ke,
            n_er_strategies: kr,
            embedding_dim: d,
            dialogue_length: p.dialogue_length,
            ee_names,
            er_names,
            true_edges: edges,
            ee_preference: from_mat(&pref),
            off_graph_rate: p.off_graph_rate,
            scm_weights: ScmWeights {
                a: from_mat(&a),
                b: from_mat(&b),
                c: from_mat(&c),
                g: g.iter().map(from_mat).collect(),
                ee_lift: from_mat(&ee_lift),
                er_lift: from_mat(&er_lift),
            },
            donation_weights: DonationWeights {
                intercept,
                state: u.iter().copied().collect(),
                ocean: ocean_w,
                noise: p.donation_noise,
            },
            noise_sigma: p.noise_sigma,
            seed: p.seed,
        })
    }

    pub fn default_world(seed: u64) -> WorldSpec {
        WorldSpec::from_params(&WorldParams {
            seed,
            ..WorldParams::default()
        })
        .expect("default parameters are valid")
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.embedding_dim;
        let w = &self.scm_weights;
        let square = |m: &Vec<Vec<f64>>, r: usize, c: usize| m.len() == r && m.iter().all(|row| row.len() == c);
        let ok = square(&w.a, d, d)
            && square(&w.b, d, d)
            && square(&w.c, d, OCEAN_DIM)
            && w.g.len() == OCEAN_DIM
            && w.g.iter().all(|g| square(g, d, d))
            && square(&w.ee_lift, d, self.n_ee_strategies)
            && square(&w.er_lift, d, self.n_er_strategies)
            && square(&self.ee_preference, self.n_ee_strategies, OCEAN_DIM)
            && self.donation_weights.state.len() == d
            && self.donation_weights.ocean.len() == OCEAN_DIM
            && self.ee_names.len() == self.n_ee_strategies
            && self.er_names.len() == self.n_er_strategies;
        if !ok {
            return Err(Error::Config("world spec shapes are inconsistent".into()));
        }
        if self
            .true_edges
            .iter()
            .any(|&(x, y)| x >= self.n_ee_strategies || y >= self.n_er_strategies)
        {
            return Err(Error::Config("true edge outside the strategy ranges".into()));
        }
        Ok(())
    }

    pub fn children(&self, x: usize) -> Vec<usize> {
        let mut c: Vec<usize> = self.true_edges.iter().filter(|e| e.0 == x).map(|e| e.1).collect();
        c.sort_unstable();
        c
    }

    pub fn vocabs(&self) -> (StrategyVocab, StrategyVocab) {
        (
            StrategyVocab::new(Role::EE, self.ee_names.clone()),
            StrategyVocab::new(Role::ER, self.er_names.clone()),
        )
    }

    /// `(ee name, er name)` form of the true edges.
    pub fn named_edges(&self) -> Vec<(String, String)> {
        self.true_edges
            .iter()
            .map(|&(x, y)| (self.ee_names[x].clone(), self.er_names[y].clone()))
            .collect()
    }
}

/// Dense matrices of a spec, ready for arithmetic.
#[derive(Debug, Clone)]
pub struct World {
    pub spec: WorldSpec,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub g: Vec<DMatrix<f64>>,
    pub ee_lift: DMatrix<f64>,
    pub er_lift: DMatrix<f64>,
    pub pref: DMatrix<f64>,
    pub u: DVector<f64>,
}

impl World {
    pub fn new(spec: &WorldSpec) -> Result<World> {
        spec.validate()?;
        let w = &spec.scm_weights;
        Ok(World {
            spec: spec.clone(),
            a: to_mat(&w.a),
            b: to_mat(&w.b),
            c: to_mat(&w.c),
            g: w.g.iter().map(|m| to_mat(m)).collect(),
            ee_lift: to_mat(&w.ee_lift),
            er_lift: to_mat(&w.er_lift),
            pref: to_mat(&spec.ee_preference),
            u: DVector::from_column_slice(&spec.donation_weights.state),
        })
    }

    /// `M(L) = B + Σ_k L_k·G_k`.
    pub fn action_map(&self, l: &[f64]) -> DMatrix<f64> {
        let mut m = self.b.clone();
        for (k, gk) in self.g.iter().enumerate() {
            m += gk * l[k];
        }
        m
    }

    /// `A·s + M(L)·a + C·L`.
    pub fn mean_next(&self, s: &[f64], a: &[f64], l: &[f64]) -> DVector<f64> {
        let s = DVector::from_column_slice(s);
        let a = DVector::from_column_slice(a);
        let l = DVector::from_column_slice(l);
        &self.a * s + self.action_map(l.as_slice()) * a + &self.c * l
    }

    pub fn ee_probs(&self, l: &[f64]) -> Vec<f64> {
        let centered = DVector::from_iterator(OCEAN_DIM, l.iter().map(|v| v - 3.0));
        softmax((&self.pref * centered).as_slice())
    }

    /// Per-strategy Poisson rates of EE turns; their sum has mean
    /// `dialogue_length + 1` at the population-mean traits.
    pub fn ee_rates(&self, l: &[f64]) -> Vec<f64> {
        let k = self.spec.n_ee_strategies as f64;
        let base = (self.spec.dialogue_length as f64 + 1.0) / k;
        let centered = DVector::from_iterator(OCEAN_DIM, l.iter().map(|v| v - 3.0));
        (&self.pref * centered).iter().map(|z| base * z.exp()).collect()
    }

    /// Number of EE turns: the sum of independent per-strategy Poisson
    /// counts, redrawn until at least two.
    fn ee_turn_count(&self, l: &[f64], rng: &mut ChaCha8Rng) -> Result<usize> {
        let total: f64 = self.ee_rates(l).iter().sum();
        let pois = Poisson::new(total).map_err(|e| Error::Config(e.to_string()))?;
        loop {
            let n = pois.sample(rng) as usize;
            if n >= 2 {
                return Ok(n);
            }
        }
    }

    fn draw(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
        let r: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if r < acc {
                return i;
            }
        }
        probs.len() - 1
    }

    fn draw_er(&self, x: usize, rng: &mut ChaCha8Rng) -> usize {
        let kids = self.spec.children(x);
        if kids.is_empty() || rng.random::<f64>() < self.spec.off_graph_rate {
            rng.random_range(0..self.spec.n_er_strategies)
        } else {
            kids[rng.random_range(0..kids.len())]
        }
    }

    fn donation_mean(&self, s_final: &[f64], l: &[f64]) -> f64 {
        let w = &self.spec.donation_weights;
        w.intercept
            + self.u.as_slice().iter().zip(s_final).map(|(u, s)| u * s).sum::<f64>()
            + w.ocean.iter().zip(l).map(|(v, l)| v * (l - 3.0)).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: WorldSpec,
    pub optimal_policy_value: f64,
    pub cpdag: Cpdag,
    /// Per dialogue id, the exogenous term `ε_{t+1}` of every transition.
    pub exogenous: BTreeMap<String, Vec<Vec<f64>>>,
    /// Per dialogue id, EE and ER strategy index sequences.
    pub ee_strategies: BTreeMap<String, Vec<usize>>,
    pub er_strategies: BTreeMap<String, Vec<usize>>,
}

impl GroundTruth {
    pub fn write(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<GroundTruth> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { line: 0, msg: e.to_string() })
    }
}

struct Generated {
    dialogue: Dialogue,
    exogenous: Vec<Vec<f64>>,
    xs: Vec<usize>,
    ys: Vec<usize>,
}

fn generate_dialogue(world: &World, i: usize) -> Result<Generated> {
    let spec = &world.spec;
    let d = spec.embedding_dim;
    let sigma = spec.noise_sigma;
    let mut rng = rng::stream(&[spec.seed, 0xD1A1, i as u64]);
    let l: Vec<f64> = (0..OCEAN_DIM).map(|_| rng.random_range(1.0..5.0)).collect();
    let probs = world.ee_probs(&l);
    let exchanges = world.ee_turn_count(&l, &mut rng)? - 1;
    let lv = DVector::from_column_slice(&l);
    let cl = &world.c * &lv;
    let m_l = world.action_map(&l);

    let mut xs = vec![World::draw(&probs, &mut rng)];
    let mut s = &cl + world.ee_lift.column(xs[0]) + noise_vec(&mut rng, d, sigma);
    let mut turns = Vec::with_capacity(2 * exchanges + 1);
    let mut ys = Vec::with_capacity(exchanges);
    let mut exogenous = Vec::with_capacity(exchanges);
    let push = |turns: &mut Vec<Turn>, role: Role, name: &str, emb: &DVector<f64>, step: usize| {
        let idx = turns.len();
        turns.push(Turn {
            index: idx,
            role,
            text: format!("{role}[strategy={name}] turn {step}"),
            embedding: emb.iter().copied().collect(),
            strategy: Some(name.to_string()),
            source: None,
        });
    };
    push(&mut turns, Role::EE, &spec.ee_names[xs[0]], &s, 0);
    for t in 0..exchanges {
        let y = world.draw_er(xs[t], &mut rng);
        let a = world.er_lift.column(y) + noise_vec(&mut rng, d, sigma);
        push(&mut turns, Role::ER, &spec.er_names[y], &a, t);
        let x_next = World::draw(&probs, &mut rng);
        let eps = world.ee_lift.column(x_next) + noise_vec(&mut rng, d, sigma);
        let mean = &world.a * &s + &m_l * &a + &cl;
        s = mean + &eps;
        push(&mut turns, Role::EE, &spec.ee_names[x_next], &s, t + 1);
        exogenous.push(eps.iter().copied().collect());
        xs.push(x_next);
        ys.push(y);
    }
    let donation_noise: f64 = rng.sample(StandardNormal);
    let raw = world.donation_mean(s.as_slice(), &l) + spec.donation_weights.noise * donation_noise;
    let donation = clip_donation(raw.max(0.0))?;
    Ok(Generated {
        dialogue: Dialogue {
            id: format!("synth-{i:05}"),
            donation_ee: donation,
            ocean: Some(OceanVector(l.try_into().expect("five traits"))),
            counterfactual: false,
            turns,
        },
        exogenous,
        xs,
        ys,
    })
}

/// Draws `m` dialogues from the world. Output is independent of the rayon
/// schedule: every dialogue owns a seed stream derived from its index.
pub fn generate(spec: &WorldSpec, m: usize) -> Result<(Corpus, GroundTruth)> {
    if m < 10 {
        return Err(Error::InvalidInput(format!("need at least 10 dialogues, got {m}")));
    }
    let world = World::new(spec)?;
    let generated: Vec<Generated> = (0..m)
        .into_par_iter()
        .map(|i| generate_dialogue(&world, i))
        .collect::<Result<_>>()?;
    let (ee, er) = spec.vocabs();
    let mut corpus = Corpus::new(spec.embedding_dim, ee, er);
    let mut exogenous = BTreeMap::new();
    let mut ee_strategies = BTreeMap::new();
    let mut er_strategies = BTreeMap::new();
    for g in generated {
        exogenous.insert(g.dialogue.id.clone(), g.exogenous);
        ee_strategies.insert(g.dialogue.id.clone(), g.xs);
        er_strategies.insert(g.dialogue.id.clone(), g.ys);
        corpus.dialogues.push(g.dialogue);
    }
    let starts = start_states(&corpus);
    let optimal_policy_value = oracle_optimal_value(spec, &starts)?;
    let names: Vec<String> = spec.ee_names.iter().chain(&spec.er_names).cloned().collect();
    let ke = spec.n_ee_strategies;
    let dag: Vec<(usize, usize)> = spec.true_edges.iter().map(|&(x, y)| (x, ke + y)).collect();
    let truth = GroundTruth {
        spec: spec.clone(),
        optimal_policy_value,
        cpdag: cpdag(&names, &dag)?,
        exogenous,
        ee_strategies,
        er_strategies,
    };
    Ok((corpus, truth))
}

/// Corpus whose persuadee states are a fixed linear image of the centered
/// traits: `s_t = W·(L − 3) + σ·ξ`, with iid Gaussian persuader actions and
/// three EE turns per dialogue. No strategy labels.
pub fn linear_trait_corpus(m: usize, dim: usize, sigma: f64, seed: u64) -> Result<Corpus> {
    if dim < OCEAN_DIM {
        return Err(Error::Config(format!("linear trait world needs dim >= {OCEAN_DIM}")));
    }
    if sigma < 0.0 {
        return Err(Error::Config("sigma must be non-negative".into()));
    }
    let mut rng = rng::stream(&[seed, 0x714A]);
    let w = gaussian(&mut rng, dim, OCEAN_DIM, 1.0 / (dim as f64).sqrt());
    let dialogues = (0..m)
        .map(|i| {
            let mut rng = rng::stream(&[seed, 0x714A, i as u64]);
            let l: Vec<f64> = (0..OCEAN_DIM).map(|_| rng.random_range(1.0..5.0)).collect();
            let centered = DVector::from_iterator(OCEAN_DIM, l.iter().map(|v| v - 3.0));
            let signal = &w * centered;
            let turns = (0..5)
                .map(|t| {
                    let role = if t % 2 == 0 { Role::EE } else { Role::ER };
                    let emb = if role == Role::EE {
                        &signal + noise_vec(&mut rng, dim, sigma)
                    } else {
                        noise_vec(&mut rng, dim, 1.0 / (dim as f64).sqrt())
                    };
                    Turn {
                        index: t,
                        role,
                        text: format!("{role} turn {t}"),
                        embedding: emb.iter().copied().collect(),
                        strategy: None,
                        source: None,
                    }
                })
                .collect();
            Dialogue {
                id: format!("linear-{i:05}"),
                donation_ee: 0.0,
                ocean: Some(OceanVector(l.try_into().expect("five traits"))),
                counterfactual: false,
                turns,
            }
        })
        .collect();
    let (ee, er) = (StrategyVocab::new(Role::EE, vec![]), StrategyVocab::new(Role::ER, vec![]));
    Ok(Corpus::new(dim, ee, er).with_dialogues(dialogues))
}

/// `(s_0, L)` of every dialogue carrying OCEAN labels.
pub fn start_states(corpus: &Corpus) -> Vec<(Vec<f64>, OceanVector)> {
    corpus
        .dialogues
        .iter()
        .filter_map(|d| {
            let first = d.turns.iter().find(|t| t.role == Role::EE)?;
            Some((first.embedding.clone(), d.ocean?))
        })
        .collect()
}

/// `A·s + M(L)·a′ + C·L + eps`.
pub fn oracle_counterfactual(
    spec: &WorldSpec,
    s: &[f64],
    a: &[f64],
    eps: &[f64],
    a_prime: &[f64],
    l: &[f64],
) -> Result<Vec<f64>> {
    let d = spec.embedding_dim;
    if s.len() != d || a.len() != d || eps.len() != d || a_prime.len() != d || l.len() != OCEAN_DIM {
        return Err(Error::Shape("oracle counterfactual inputs do not match the world".into()));
    }
    let world = World::new(spec)?;
    Ok(oracle_with(&world, a_prime, s, eps, l))
}

fn oracle_with(world: &World, a_prime: &[f64], s: &[f64], eps: &[f64], l: &[f64]) -> Vec<f64> {
    let mean = world.mean_next(s, a_prime, l);
    (mean + DVector::from_column_slice(eps)).iter().copied().collect()
}

/// `E[clip(Y, 0, cap)]` for `Y ~ N(mu, sd²)`.
pub fn expected_clipped(mu: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return mu.clamp(0.0, DONATION_CAP);
    }
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let excess = |k: f64| {
        let z = (mu - k) / sd;
        (mu - k) * n.cdf(z) + sd * n.pdf(z)
    };
    excess(0.0) - excess(DONATION_CAP)
}

/// Closed-form pieces of the final-state donation for one start.
struct StartModel {
    /// Deterministic part of the donation mean excluding actions.
    base: f64,
    /// `gain[t][y]`: contribution of choosing ER strategy `y` at step `t`.
    gain: Vec<Vec<f64>>,
    /// Discrete distribution of the EE-lift contribution: (value, prob).
    lift_atoms: Vec<(f64, f64)>,
    sd: f64,
}

fn start_model(world: &World, s0: &[f64], l: &[f64], horizon: usize) -> StartModel {
    let spec = &world.spec;
    let sigma = spec.noise_sigma;
    let m_l = world.action_map(l);
    let lv = DVector::from_column_slice(l);
    let cl = &world.c * &lv;
    // uA[k] = u^T A^k
    let mut u_pows = vec![world.u.transpose()];
    for k in 1..=horizon {
        let next = &u_pows[k - 1] * &world.a;
        u_pows.push(next);
    }
    let s0v = DVector::from_column_slice(s0);
    let mut base = (&u_pows[horizon] * s0v)[0];
    for t in 0..horizon {
        base += (&u_pows[horizon - 1 - t] * &cl)[0];
    }
    base += spec
        .donation_weights
        .ocean
        .iter()
        .zip(l)
        .map(|(v, l)| v * (l - 3.0))
        .sum::<f64>()
        + spec.donation_weights.intercept;
    let gain: Vec<Vec<f64>> = (0..horizon)
        .map(|t| {
            let row = &u_pows[horizon - 1 - t] * &m_l * &world.er_lift;
            row.iter().copied().collect()
        })
        .collect();
    let mut var = spec.donation_weights.noise.powi(2);
    for t in 0..horizon {
        // state noise at s_{t+1} and action noise at a_t
        var += sigma * sigma * u_pows[horizon - 1 - t].norm_squared();
        var += sigma * sigma * (&u_pows[horizon - 1 - t] * &m_l).norm_squared();
    }
    let probs = world.ee_probs(l);
    let mut atoms = vec![(0.0, 1.0)];
    for t in 0..horizon {
        let proj = &u_pows[horizon - 1 - t] * &world.ee_lift;
        let mut next = Vec::with_capacity(atoms.len() * probs.len());
        for &(v, p) in &atoms {
            for (x, px) in probs.iter().enumerate() {
                next.push((v + proj[x], p * px));
            }
        }
        atoms = next;
    }
    StartModel {
        base,
        gain,
        lift_atoms: atoms,
        sd: var.sqrt(),
    }
}

impl StartModel {
    fn value(&self, mu_actions: f64) -> f64 {
        self.lift_atoms
            .iter()
            .map(|&(v, p)| p * expected_clipped(self.base + mu_actions + v, self.sd))
            .sum()
    }
}

fn check_budget(spec: &WorldSpec, horizon: usize) -> Result<usize> {
    let k = spec.n_er_strategies;
    let mut total: usize = 1;
    for _ in 0..horizon {
        total = total.saturating_mul(k);
    }
    let atoms = spec.n_ee_strategies.saturating_pow(horizon as u32);
    if total > ENUMERATION_BUDGET || atoms > ENUMERATION_BUDGET {
        return Err(Error::InvalidInput(format!(
            "{total} action sequences over horizon {horizon} exceed the enumeration budget"
        )));
    }
    Ok(total)
}

/// Expected clipped donation of an open-loop ER strategy sequence from
/// `(s_0, L)`, with all noise integrated exactly.
pub fn expected_donation(spec: &WorldSpec, s0: &[f64], l: &OceanVector, seq: &[usize]) -> Result<f64> {
    check_budget(spec, seq.len())?;
    if seq.iter().any(|&y| y >= spec.n_er_strategies) {
        return Err(Error::InvalidInput("action index outside ER vocabulary".into()));
    }
    let world = World::new(spec)?;
    let sm = start_model(&world, s0, l.as_slice(), seq.len());
    let mu: f64 = seq.iter().enumerate().map(|(t, &y)| sm.gain[t][y]).sum();
    Ok(sm.value(mu))
}

/// Best open-loop sequence for one start, by exhaustive enumeration.
pub fn optimal_sequence(spec: &WorldSpec, s0: &[f64], l: &OceanVector) -> Result<(Vec<usize>, f64)> {
    let horizon = spec.dialogue_length;
    let total = check_budget(spec, horizon)?;
    let world = World::new(spec)?;
    let sm = start_model(&world, s0, l.as_slice(), horizon);
    let k = spec.n_er_strategies;
    let mut best: Option<(f64, usize)> = None;
    for code in 0..total {
        let mut c = code;
        let mut mu = 0.0;
        for t in 0..horizon {
            mu += sm.gain[t][c % k];
            c /= k;
        }
        // the expected clipped value is non-decreasing in the mean
        if best.is_none_or(|(b, _)| mu > b) {
            best = Some((mu, code));
        }
    }
    let (mu, code) = best.expect("at least one sequence");
    let mut seq = Vec::with_capacity(horizon);
    let mut c = code;
    for _ in 0..horizon {
        seq.push(c % k);
        c /= k;
    }
    Ok((seq, sm.value(mu)))
}

/// Mean over starts of the best expected clipped donation.
pub fn oracle_optimal_value(spec: &WorldSpec, starts: &[(Vec<f64>, OceanVector)]) -> Result<f64> {
    if starts.is_empty() {
        return Err(Error::InsufficientData("no start states".into()));
    }
    let values: Vec<f64> = starts
        .par_iter()
        .map(|(s0, l)| optimal_sequence(spec, s0, l).map(|(_, v)| v))
        .collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Turn-level lift `P(x, y) / (P(x)·P(y))` of every (EE, ER) pair where the
/// ER turn directly follows the EE turn.
pub fn cooccurrence_lift(corpus: &Corpus) -> BTreeMap<(String, String), f64> {
    let mut joint: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut px: BTreeMap<String, f64> = BTreeMap::new();
    let mut py: BTreeMap<String, f64> = BTreeMap::new();
    let mut n = 0.0;
    for d in &corpus.dialogues {
        for w in d.turns.windows(2) {
            if w[0].role != Role::EE || w[1].role != Role::ER {
                continue;
            }
            if let (Some(x), Some(y)) = (&w[0].strategy, &w[1].strategy) {
                *joint.entry((x.clone(), y.clone())).or_default() += 1.0;
                *px.entry(x.clone()).or_default() += 1.0;
                *py.entry(y.clone()).or_default() += 1.0;
                n += 1.0;
            }
        }
    }
    joint
        .into_iter()
        .map(|((x, y), c)| {
            let lift = (c / n) / ((px[&x] / n) * (py[&y] / n));
            ((x, y), lift)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldSpec {
        WorldSpec::default_world(7)
    }

    #[test]
    fn too_few_dialogues_is_an_error() {
        assert!(generate(&small(), 0).is_err());
        assert!(generate(&small(), 9).is_err());
    }

    #[test]
    fn regeneration_is_identical_without_noise() {
        let spec = WorldSpec::from_params(&WorldParams {
            noise_sigma: 0.0,
            seed: 3,
            ..WorldParams::default()
        })
        .unwrap();
        let (a, _) = generate(&spec, 20).unwrap();
        let (b, _) = generate(&spec, 20).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generated_corpus_revalidates() {
        let (c, _) = generate(&small(), 30).unwrap();
        let back = Corpus::parse_jsonl(&c.to_jsonl()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn factual_replay_matches_exactly() {
        let spec = small();
        let (c, truth) = generate(&spec, 20).unwrap();
        let world = World::new(&spec).unwrap();
        for d in &c.dialogues {
            let l = d.ocean.unwrap();
            let eps = &truth.exogenous[&d.id];
            for (t, w) in crate::corpus::dialogue_transitions(d).unwrap().iter().enumerate() {
                let out = oracle_with(&world, &w.a, &w.s, &eps[t], l.as_slice());
                assert_eq!(out, w.s_next);
            }
        }
    }

    #[test]
    fn oracle_linearity_cases() {
        let spec = small();
        let d = spec.embedding_dim;
        let a_prime: Vec<f64> = (0..d).map(|i| i as f64 * 0.1).collect();
        let zero = vec![0.0; d];
        let out = oracle_counterfactual(&spec, &zero, &zero, &zero, &a_prime, &[0.0; 5]).unwrap();
        let b = to_mat(&spec.scm_weights.b) * DVector::from_column_slice(&a_prime);
        for (o, e) in out.iter().zip(b.iter()) {
            assert!((o - e).abs() < 1e-12);
        }
        assert!(oracle_counterfactual(&spec, &zero[1..], &zero, &zero, &a_prime, &[0.0; 5]).is_err());
    }

    #[test]
    fn residuals_vanish_without_noise() {
        let spec = WorldSpec::from_params(&WorldParams {
            noise_sigma: 0.0,
            ..WorldParams::default()
        })
        .unwrap();
        let (c, truth) = generate(&spec, 15).unwrap();
        let world = World::new(&spec).unwrap();
        for d in &c.dialogues {
            let xs = &truth.ee_strategies[&d.id];
            let l = d.ocean.unwrap();
            for w in crate::corpus::dialogue_transitions(d).unwrap() {
                let mean = world.mean_next(&w.s, &w.a, l.as_slice()) + world.ee_lift.column(xs[w.t + 1]);
                let r: f64 = mean.iter().zip(&w.s_next).map(|(m, s)| (m - s).abs()).fold(0.0, f64::max);
                assert!(r < 1e-12, "{r}");
            }
        }
    }

    #[test]
    fn expected_clipped_limits() {
        assert_eq!(expected_clipped(3.0, 0.0), 3.0);
        assert_eq!(expected_clipped(12.0, 0.0), 10.0);
        assert!((expected_clipped(5.0, 1e-6) - 5.0).abs() < 1e-9);
        assert!((expected_clipped(-50.0, 1.0)).abs() < 1e-12);
        // symmetric around the middle of the cap
        assert!((expected_clipped(5.0, 3.0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn dominant_action_wins() {
        let spec = small();
        let (c, _) = generate(&spec, 10).unwrap();
        let (s0, l) = &start_states(&c)[0];
        let (seq, v) = optimal_sequence(&spec, s0, l).unwrap();
        for y in 0..spec.n_er_strategies {
            let mut alt = seq.clone();
            alt[0] = y;
            assert!(expected_donation(&spec, s0, l, &alt).unwrap() <= v + 1e-12);
        }
    }

    #[test]
    fn budget_is_enforced() {
        let mut spec = small();
        spec.dialogue_length = 7;
        let (s0, l) = (vec![0.0; spec.embedding_dim], OceanVector([3.0; 5]));
        assert!(optimal_sequence(&spec, &s0, &l).is_err());
    }
}
