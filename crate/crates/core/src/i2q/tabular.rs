//! Exact tabular I2Q on small deterministic, fully observable MDPs.

use crate::error::{usage, Result};

/// Deterministic multi-agent MDP with a joint action space.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_agents: usize,
    /// Actions per agent.
    pub n_actions: usize,
    /// `next[s * n_joint + j]`.
    pub next: Vec<usize>,
    /// `reward[s * n_joint + j]`.
    pub reward: Vec<f64>,
    /// Absorbing states with no further reward.
    pub terminal: Vec<bool>,
}

impl TabularMdp {
    pub fn n_joint(&self) -> usize {
        self.n_actions.pow(self.n_agents as u32)
    }

    /// Mixed-radix index, agent 0 least significant.
    pub fn joint_index(&self, actions: &[usize]) -> usize {
        actions.iter().rev().fold(0, |acc, &a| acc * self.n_actions + a)
    }

    pub fn decode_joint(&self, mut j: usize) -> Vec<usize> {
        (0..self.n_agents)
            .map(|_| {
                let a = j % self.n_actions;
                j /= self.n_actions;
                a
            })
            .collect()
    }

    pub fn step(&self, s: usize, j: usize) -> (usize, f64) {
        let k = s * self.n_joint() + j;
        (self.next[k], self.reward[k])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_states * self.n_joint();
        if self.next.len() != n || self.reward.len() != n || self.terminal.len() != self.n_states {
            return Err(usage("tabular MDP tables have inconsistent sizes"));
        }
        if self.next.iter().any(|&s| s >= self.n_states) {
            return Err(usage("tabular MDP transition out of range"));
        }
        Ok(())
    }
}

/// Converged state-state values; `NEG_INFINITY` marks unreachable pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularI2q {
    pub n_states: usize,
    pub qss: Vec<f64>,
}

impl TabularI2q {
    pub fn get(&self, s: usize, s_next: usize) -> f64 {
        self.qss[s * self.n_states + s_next]
    }

    /// `max_{s'} Qss(s, s')`; zero in terminal states.
    pub fn value(&self, mdp: &TabularMdp, s: usize) -> f64 {
        if mdp.terminal[s] {
            return 0.0;
        }
        (0..self.n_states).map(|t| self.get(s, t)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Exact transition model of agent `agent`: the best next state it can
    /// reach with `action` under some behaviour of the others.
    pub fn transition_model(&self, mdp: &TabularMdp, agent: usize, s: usize, action: usize) -> usize {
        let mut best = None::<(usize, f64)>;
        for j in 0..mdp.n_joint() {
            if mdp.decode_joint(j)[agent] != action {
                continue;
            }
            let (t, _) = mdp.step(s, j);
            let v = self.get(s, t);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((t, v));
            }
        }
        best.expect("every action has a successor").0
    }

    /// `Q_i(s, a_i) = Qss(s, f_i(s, a_i))`.
    pub fn agent_q(&self, mdp: &TabularMdp, agent: usize, s: usize, action: usize) -> f64 {
        self.get(s, self.transition_model(mdp, agent, s, action))
    }
}

/// Iterates `Qss(s, s') <- r(s, s') + gamma * max_{s''} Qss(s', s'')` over
/// reachable pairs until the sup-norm change drops below `tol`. `r(s, s')` is
/// the best reward of any joint action leading from `s` to `s'`.
pub fn i2q_fixed_point(mdp: &TabularMdp, gamma: f64, tol: f64, max_iters: usize) -> Result<TabularI2q> {
    mdp.validate()?;
    if !(0.0..1.0).contains(&gamma) {
        return Err(usage("tabular iteration needs gamma in [0, 1)"));
    }
    let n = mdp.n_states;
    let mut reward = vec![f64::NEG_INFINITY; n * n];
    for s in 0..n {
        if mdp.terminal[s] {
            continue;
        }
        for j in 0..mdp.n_joint() {
            let (t, r) = mdp.step(s, j);
            let k = s * n + t;
            reward[k] = reward[k].max(r);
        }
    }
    let mut table = TabularI2q {
        n_states: n,
        qss: reward.iter().map(|&r| if r.is_finite() { 0.0 } else { f64::NEG_INFINITY }).collect(),
    };
    for _ in 0..max_iters {
        let values: Vec<f64> = (0..n).map(|s| table.value(mdp, s)).collect();
        let mut delta: f64 = 0.0;
        for s in 0..n {
            for t in 0..n {
                let k = s * n + t;
                if reward[k].is_finite() {
                    let updated = reward[k] + gamma * values[t];
                    delta = delta.max((updated - table.qss[k]).abs());
                    table.qss[k] = updated;
                }
            }
        }
        if delta < tol {
            return Ok(table);
        }
    }
    Err(usage("tabular I2Q did not converge"))
}
