//! Offline double-DQN training over counterfactual databases and greedy
//! rollout of the learned policy.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::DuelingQNet;
use crate::cfengine::CfDatabase;
use crate::corpus::{transition_windows, Corpus, Dialogue, TurnSource};
use crate::error::{Error, Result};
use crate::numcore::{Optimizer, OptimizerKind};
use crate::reward::DdpModel;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub target_sync: usize,
    pub updates: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            gamma: 0.9,
            batch_size: 60,
            learning_rate: 1e-3,
            target_sync: 100,
            updates: 2000,
            hidden: 256,
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if self.batch_size == 0 || self.target_sync == 0 || self.hidden == 0 {
            return Err(Error::Config("batch size, target sync and hidden size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// One replayed step. Candidate sets index into [`ReplaySet::actions`].
#[derive(Debug, Clone, PartialEq)]
pub struct QTransition {
    pub state: Vec<f64>,
    pub set: usize,
    /// Position of the taken action within its candidate set.
    pub taken: usize,
    pub reward: f64,
    /// `None` at terminal steps.
    pub next: Option<(Vec<f64>, usize)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplaySet {
    pub actions: Vec<Vec<f64>>,
    pub sets: Vec<Vec<usize>>,
    pub transitions: Vec<QTransition>,
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn intern(replay: &mut ReplaySet, ids: &mut BTreeMap<Vec<u64>, usize>, a: &[f64]) -> usize {
    *ids.entry(bits(a)).or_insert_with(|| {
        replay.actions.push(a.to_vec());
        replay.actions.len() - 1
    })
}

impl ReplaySet {
    fn candidates(&self, set: usize) -> Vec<&[f64]> {
        self.sets[set].iter().map(|&a| self.actions[a].as_slice()).collect()
    }

    /// Transitions of every database. The candidate set at `(dialogue, t)`
    /// holds the distinct actions the databases took there plus the factual
    /// action; rewards follow the terminal-only rule.
    pub fn from_databases(databases: &[CfDatabase], factual: &Corpus, ddp: &DdpModel) -> Result<ReplaySet> {
        let Some(first) = databases.first() else {
            return Err(Error::InsufficientData("no counterfactual databases".into()));
        };
        let m = first.dialogues.len();
        if databases.iter().any(|db| db.dialogues.len() != m) || factual.dialogues.len() != m {
            return Err(Error::Shape("databases and factual corpus differ in size".into()));
        }
        let mut replay = ReplaySet::default();
        let mut action_ids: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
        for di in 0..m {
            let fact = &factual.dialogues[di];
            let fw = transition_windows(fact)?;
            let windows: Vec<Vec<(usize, usize, usize)>> = databases
                .iter()
                .map(|db| transition_windows(&db.dialogues[di]))
                .collect::<Result<_>>()?;
            if windows.iter().any(|w| w.len() != fw.len()) {
                return Err(Error::Shape(format!("dialogue {} has inconsistent lengths", fact.id)));
            }
            let horizon = fw.len();
            let mut set_of_step = Vec::with_capacity(horizon);
            for t in 0..horizon {
                let mut ids: Vec<usize> = Vec::new();
                for (db, w) in databases.iter().zip(&windows) {
                    let id = intern(&mut replay, &mut action_ids, &db.dialogues[di].turns[w[t].1].embedding);
                    if !ids.contains(&id) {
                        ids.push(id);
                    }
                }
                let f = intern(&mut replay, &mut action_ids, &fact.turns[fw[t].1].embedding);
                if !ids.contains(&f) {
                    ids.push(f);
                }
                replay.sets.push(ids);
                set_of_step.push(replay.sets.len() - 1);
            }
            for (db, w) in databases.iter().zip(&windows) {
                let d = &db.dialogues[di];
                let terminal_reward = ddp.predict(d);
                for (t, &(i, j, k)) in w.iter().enumerate() {
                    let set = set_of_step[t];
                    let id = action_ids[&bits(&d.turns[j].embedding)];
                    let taken = replay.sets[set].iter().position(|&x| x == id).expect("action interned");
                    let terminal = t + 1 == horizon;
                    replay.transitions.push(QTransition {
                        state: d.turns[i].embedding.clone(),
                        set,
                        taken,
                        reward: if terminal { terminal_reward } else { 0.0 },
                        next: (!terminal).then(|| (d.turns[k].embedding.clone(), set_of_step[t + 1])),
                    });
                }
            }
        }
        Ok(replay)
    }
}

/// Double-DQN target: `r + γ·Q_target(s′, argmax_c Q_main(s′, c))`, or `r`
/// at terminal steps.
pub fn double_q_target(
    main: &DuelingQNet,
    target: &DuelingQNet,
    reward: f64,
    gamma: f64,
    next: Option<(&[f64], &[&[f64]])>,
) -> Result<f64> {
    let Some((s, cands)) = next else {
        return Ok(reward);
    };
    let q_main = main.q_values(s, cands)?;
    let best = argmax_first(&q_main);
    Ok(reward + gamma * target.q_values(s, cands)?[best])
}

/// Index of the maximum; ties go to the lowest index.
pub fn argmax_first(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPolicy {
    pub net: DuelingQNet,
    pub target: DuelingQNet,
    pub config: PolicyConfig,
    /// Mean squared TD error of every update.
    pub loss_trace: Vec<f64>,
}

pub fn train_replay(replay: &ReplaySet, config: &PolicyConfig) -> Result<TrainedPolicy> {
    config.validate()?;
    let Some(first) = replay.transitions.first() else {
        return Err(Error::InsufficientData("empty replay set".into()));
    };
    let state_dim = first.state.len();
    let action_dim = replay.actions[0].len();
    let mut net = DuelingQNet::new(state_dim, action_dim, config.hidden, config.seed)?;
    let mut target = net.clone();
    let mut params = net.params_flat();
    let mut opt = Optimizer::new(OptimizerKind::Adam, config.learning_rate, 0.0, params.len());
    let mut rng = rng::stream(&[config.seed, 0x0DDB]);
    let n = replay.transitions.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut loss_trace = Vec::with_capacity(config.updates);
    for update in 0..config.updates {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let y: Vec<f64> = batch
            .iter()
            .map(|&b| {
                let tr = &replay.transitions[b];
                let next = tr.next.as_ref().map(|(s, set)| (s.as_slice(), replay.candidates(*set)));
                double_q_target(&net, &target, tr.reward, config.gamma, next.as_ref().map(|(s, c)| (*s, c.as_slice())))
            })
            .collect::<Result<_>>()?;
        let states: Vec<&[f64]> = batch.iter().map(|&b| replay.transitions[b].state.as_slice()).collect();
        let cands: Vec<Vec<&[f64]>> = batch.iter().map(|&b| replay.candidates(replay.transitions[b].set)).collect();
        let taken: Vec<usize> = batch.iter().map(|&b| replay.transitions[b].taken).collect();
        // two passes: Q values first, then the gradient with the TD errors
        let ones = vec![1.0; batch.len()];
        let (_, q) = net.gradient(&states, &cands, &taken, &ones)?;
        let bsz = batch.len() as f64;
        let loss = q.iter().zip(&y).map(|(q, y)| (q - y).powi(2)).sum::<f64>() / bsz;
        if !loss.is_finite() {
            return Err(Error::Numeric("q-learning loss diverged".into()));
        }
        let up: Vec<f64> = q.iter().zip(&y).map(|(q, y)| 2.0 * (q - y) / bsz).collect();
        let (grad, _) = net.gradient(&states, &cands, &taken, &up)?;
        opt.step_flat(&mut params, &grad);
        net.set_params_flat(&params)?;
        loss_trace.push(loss);
        if (update + 1) % config.target_sync == 0 {
            target = net.clone();
        }
    }
    Ok(TrainedPolicy { net, target, config: config.clone(), loss_trace })
}

pub fn train(databases: &[CfDatabase], factual: &Corpus, ddp: &DdpModel, config: &PolicyConfig) -> Result<TrainedPolicy> {
    train_replay(&ReplaySet::from_databases(databases, factual, ddp)?, config)
}

/// Greedy walk through the databases: at each step take the database whose
/// action has the highest Q at the current state (ties to the lowest index)
/// and continue from that database's next state.
pub fn rollout(net: &DuelingQNet, databases: &[CfDatabase]) -> Result<Vec<Dialogue>> {
    let Some(first) = databases.first() else {
        return Ok(Vec::new());
    };
    (0..first.dialogues.len())
        .into_par_iter()
        .map(|di| {
            let ds: Vec<&Dialogue> = databases.iter().map(|db| &db.dialogues[di]).collect();
            let windows: Vec<Vec<(usize, usize, usize)>> =
                ds.iter().map(|d| transition_windows(d)).collect::<Result<_>>()?;
            let base = ds[0];
            let Some(&(start, _, _)) = windows[0].first() else {
                return Ok(base.clone());
            };
            let mut turns = base.turns[..=start].to_vec();
            let mut state = base.turns[start].embedding.clone();
            let mut last = (0usize, start);
            for t in 0..windows[0].len() {
                let cands: Vec<&[f64]> = ds.iter().zip(&windows).map(|(d, w)| d.turns[w[t].1].embedding.as_slice()).collect();
                let pick = argmax_first(&net.q_values(&state, &cands)?);
                let (_, j, k) = windows[pick][t];
                turns.push(ds[pick].turns[j].clone());
                turns.push(ds[pick].turns[k].clone());
                state = ds[pick].turns[k].embedding.clone();
                last = (pick, k);
            }
            turns.extend(ds[last.0].turns[last.1 + 1..].iter().cloned());
            for t in &mut turns {
                t.source.get_or_insert(TurnSource::Factual);
            }
            Ok(Dialogue { turns, counterfactual: true, ..base.clone() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::toy::ToyMdp;
    use super::*;
    use crate::cfengine::{ActionMode, EngineKind};
    use crate::corpus::{Role, Turn};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn turn(i: usize, role: Role, embedding: Vec<f64>) -> Turn {
        Turn { index: i, role, text: format!("{role} {i}"), embedding, strategy: None, source: None }
    }

    /// EE, ER, EE, ER, EE with the given ER actions and EE states.
    fn dialogue(id: &str, states: [[f64; 2]; 3], actions: [[f64; 2]; 2]) -> Dialogue {
        let turns = vec![
            turn(0, Role::EE, states[0].to_vec()),
            turn(1, Role::ER, actions[0].to_vec()),
            turn(2, Role::EE, states[1].to_vec()),
            turn(3, Role::ER, actions[1].to_vec()),
            turn(4, Role::EE, states[2].to_vec()),
        ];
        Dialogue { id: id.into(), donation_ee: 0.0, ocean: None, counterfactual: true, turns }
    }

    fn database(index: usize, dialogues: Vec<Dialogue>) -> CfDatabase {
        CfDatabase {
            index,
            engine: EngineKind::Scm,
            actions: ActionMode::Causal,
            latent: true,
            graph_checksum: String::new(),
            seed: index as u64,
            dialogues,
        }
    }

    fn small_config(seed: u64) -> PolicyConfig {
        PolicyConfig { hidden: 32, updates: 3000, learning_rate: 3e-3, target_sync: 50, seed, ..Default::default() }
    }

    #[test]
    fn argmax_ties_go_to_lowest_index() {
        assert_eq!(argmax_first(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax_first(&[0.0, 0.0]), 0);
    }

    #[test]
    fn double_target_uses_target_value_at_main_argmax() {
        let main = DuelingQNet::new(2, 2, 16, 1).unwrap();
        let target = DuelingQNet::new(2, 2, 16, 2).unwrap();
        let mut rng = rng::stream(&[9]);
        let mut found = false;
        for _ in 0..500 {
            let s: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let acts: Vec<Vec<f64>> = (0..4).map(|_| (0..2).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let cands: Vec<&[f64]> = acts.iter().map(|a| a.as_slice()).collect();
            let qm = main.q_values(&s, &cands).unwrap();
            let qt = target.q_values(&s, &cands).unwrap();
            let (im, it) = (argmax_first(&qm), argmax_first(&qt));
            if im == it {
                continue;
            }
            let y = double_q_target(&main, &target, 0.5, 0.9, Some((&s, &cands))).unwrap();
            assert!((y - (0.5 + 0.9 * qt[im])).abs() < 1e-12);
            assert!((y - (0.5 + 0.9 * qt[it])).abs() > 1e-9);
            found = true;
            break;
        }
        assert!(found, "no state with disagreeing argmax");
        assert_eq!(double_q_target(&main, &target, 1.25, 0.9, None).unwrap(), 1.25);
    }

    #[test]
    fn terminal_rewards_are_learned_as_fixed_point() {
        let mut rng = rng::stream(&[3]);
        let actions: Vec<Vec<f64>> = (0..3).map(|_| (0..2).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        let transitions = (0..40)
            .map(|i| QTransition {
                state: (0..3).map(|_| StandardNormal.sample(&mut rng)).collect(),
                set: 0,
                taken: i % 3,
                reward: 5.0,
                next: None,
            })
            .collect();
        let replay = ReplaySet { actions, sets: vec![vec![0, 1, 2]], transitions };
        let cfg = PolicyConfig { updates: 1500, ..small_config(4) };
        let pol = train_replay(&replay, &cfg).unwrap();
        for tr in &replay.transitions {
            let q = pol.net.q_values(&tr.state, &replay.candidates(0)).unwrap();
            assert!((q[tr.taken] - 5.0).abs() <= 0.1, "q = {}", q[tr.taken]);
        }
    }

    #[test]
    fn zero_discount_regresses_immediate_reward() {
        let mut rng = rng::stream(&[5]);
        let actions = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let transitions: Vec<QTransition> = (0..60)
            .map(|i| {
                let state: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
                let taken = i % 2;
                let reward = state[0] + if taken == 0 { 1.0 } else { -1.0 };
                let next = Some(((0..2).map(|_| rng.random_range(-1.0..1.0)).collect(), 0));
                QTransition { state, set: 0, taken, reward, next }
            })
            .collect();
        let replay = ReplaySet { actions, sets: vec![vec![0, 1]], transitions };
        let cfg = PolicyConfig { gamma: 0.0, ..small_config(6) };
        let pol = train_replay(&replay, &cfg).unwrap();
        let mse = replay
            .transitions
            .iter()
            .map(|tr| (pol.net.q_values(&tr.state, &replay.candidates(0)).unwrap()[tr.taken] - tr.reward).powi(2))
            .sum::<f64>()
            / replay.transitions.len() as f64;
        assert!(mse < 1e-2, "mse {mse}");
    }

    #[test]
    fn toy_mdp_reaches_value_iteration_optimum() {
        let mdp = ToyMdp::two_state(0.9);
        let qstar = mdp.value_iteration(1e-12);
        let replay = mdp.replay();
        let cfg = PolicyConfig { updates: 5000, ..small_config(8) };
        let pol = train_replay(&replay, &cfg).unwrap();
        let cands: Vec<Vec<f64>> = (0..2).map(|a| mdp.action(a)).collect();
        let cands: Vec<&[f64]> = cands.iter().map(|a| a.as_slice()).collect();
        let mut greedy = Vec::new();
        for s in 0..2 {
            let q = pol.net.q_values(&mdp.state(s), &cands).unwrap();
            for a in 0..2 {
                assert!((q[a] - qstar[s][a]).abs() <= 0.05, "Q({s},{a}) = {} vs {}", q[a], qstar[s][a]);
            }
            greedy.push(argmax_first(&q));
        }
        for s in 0..2 {
            let opt = qstar[s].iter().cloned().fold(f64::MIN, f64::max);
            assert!(mdp.discounted_return(&greedy, s, 400) >= 0.95 * opt);
        }
    }

    #[test]
    fn replay_candidate_sets_dedupe_and_include_factual() {
        let states = [[0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        let db0 = database(0, vec![dialogue("a", states, [[1.0, 0.0], [0.0, 1.0]])]);
        let db1 = database(1, vec![dialogue("a", states, [[1.0, 0.0], [0.5, 0.5]])]);
        let mut factual_d = dialogue("a", states, [[0.2, 0.2], [0.0, 1.0]]);
        factual_d.counterfactual = false;
        let mut factual = Corpus::new(
            2,
            crate::strategy::StrategyVocab::new(Role::EE, vec![]),
            crate::strategy::StrategyVocab::new(Role::ER, vec![]),
        );
        factual.dialogues.push(factual_d.clone());
        let ddp = DdpModel {
            pooling: crate::reward::POOLING.into(),
            embedding_dim: 2,
            weights: vec![0.0; 6],
            intercept: 3.0,
            ridge: 1.0,
            clip: true,
            seed: 0,
        };
        let replay = ReplaySet::from_databases(&[db0, db1], &factual, &ddp).unwrap();
        assert_eq!(replay.transitions.len(), 4);
        assert_eq!(replay.sets[0].len(), 2);
        assert_eq!(replay.sets[1].len(), 2);
        assert_eq!(replay.transitions[0].reward, 0.0);
        assert_eq!(replay.transitions[1].reward, 3.0);
        assert!(replay.transitions[1].next.is_none());
        assert_eq!(replay.transitions[0].next.as_ref().unwrap().1, 1);
    }

    #[test]
    fn rollout_with_one_database_replays_it() {
        let d = dialogue("a", [[0.0, 1.0], [1.0, 0.0], [1.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]);
        let db = database(0, vec![d.clone()]);
        let net = DuelingQNet::new(2, 2, 8, 3).unwrap();
        let out = rollout(&net, &[db]).unwrap();
        assert_eq!(out.len(), 1);
        let emb: Vec<&Vec<f64>> = out[0].turns.iter().map(|t| &t.embedding).collect();
        let want: Vec<&Vec<f64>> = d.turns.iter().map(|t| &t.embedding).collect();
        assert_eq!(emb, want);
    }

    #[test]
    fn rollout_ties_follow_lowest_database() {
        let a = [[1.0, 0.0], [0.0, 1.0]];
        let d0 = dialogue("a", [[0.0, 1.0], [1.0, 0.0], [1.0, 1.0]], a);
        let d1 = dialogue("a", [[0.0, 1.0], [-1.0, 0.0], [-1.0, -1.0]], a);
        let net = DuelingQNet::new(2, 2, 8, 3).unwrap();
        let out = rollout(&net, &[database(0, vec![d0.clone()]), database(1, vec![d1])]).unwrap();
        assert_eq!(out[0].turns[2].embedding, d0.turns[2].embedding);
        assert_eq!(out[0].turns[4].embedding, d0.turns[4].embedding);
    }
}
