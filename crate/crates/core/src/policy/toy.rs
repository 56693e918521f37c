//! Small deterministic MDP with a tabular value-iteration solution, used to
//! check the Q-learner against a known optimum.

use super::train::{QTransition, ReplaySet};

#[derive(Debug, Clone, PartialEq)]
pub struct ToyMdp {
    /// `next[s][a]`
    pub next: Vec<Vec<usize>>,
    /// `reward[s][a]`
    pub reward: Vec<Vec<f64>>,
    pub gamma: f64,
}

fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

impl ToyMdp {
    /// Two states, two actions. Staying in state 0 pays 1, staying in state 1
    /// pays 2, switching pays nothing.
    pub fn two_state(gamma: f64) -> ToyMdp {
        ToyMdp { next: vec![vec![0, 1], vec![1, 0]], reward: vec![vec![1.0, 0.0], vec![2.0, 0.0]], gamma }
    }

    pub fn n_states(&self) -> usize {
        self.next.len()
    }

    pub fn n_actions(&self) -> usize {
        self.next[0].len()
    }

    pub fn state(&self, s: usize) -> Vec<f64> {
        one_hot(s, self.n_states())
    }

    pub fn action(&self, a: usize) -> Vec<f64> {
        one_hot(a, self.n_actions())
    }

    /// Optimal action values by value iteration to a fixed point.
    pub fn value_iteration(&self, tol: f64) -> Vec<Vec<f64>> {
        let (ns, na) = (self.n_states(), self.n_actions());
        let mut q = vec![vec![0.0; na]; ns];
        loop {
            let v: Vec<f64> = q.iter().map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
            let mut delta: f64 = 0.0;
            for s in 0..ns {
                for a in 0..na {
                    let new = self.reward[s][a] + self.gamma * v[self.next[s][a]];
                    delta = delta.max((new - q[s][a]).abs());
                    q[s][a] = new;
                }
            }
            if delta < tol {
                return q;
            }
        }
    }

    /// Discounted return of a greedy policy over `horizon` steps.
    pub fn discounted_return(&self, policy: &[usize], start: usize, horizon: usize) -> f64 {
        let (mut s, mut g, mut disc) = (start, 0.0, 1.0);
        for _ in 0..horizon {
            let a = policy[s];
            g += disc * self.reward[s][a];
            disc *= self.gamma;
            s = self.next[s][a];
        }
        g
    }

    /// Every (state, action) pair once, all actions available everywhere.
    pub fn replay(&self) -> ReplaySet {
        let (ns, na) = (self.n_states(), self.n_actions());
        let actions = (0..na).map(|a| self.action(a)).collect();
        let mut transitions = Vec::new();
        for s in 0..ns {
            for a in 0..na {
                transitions.push(QTransition {
                    state: self.state(s),
                    set: 0,
                    taken: a,
                    reward: self.reward[s][a],
                    next: Some((self.state(self.next[s][a]), 0)),
                });
            }
        }
        ReplaySet { actions, sets: vec![(0..na).collect()], transitions }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_iteration_matches_closed_form() {
        let q = ToyMdp::two_state(0.9).value_iteration(1e-12);
        assert!((q[1][0] - 20.0).abs() < 1e-8);
        assert!((q[0][1] - 18.0).abs() < 1e-8);
        assert!((q[0][0] - 17.2).abs() < 1e-8);
        assert!((q[1][1] - 16.2).abs() < 1e-8);
    }

    #[test]
    fn greedy_return_of_optimal_policy() {
        let mdp = ToyMdp::two_state(0.9);
        let g = mdp.discounted_return(&[1, 0], 0, 400);
        assert!((g - 18.0).abs() < 1e-6);
    }
}
