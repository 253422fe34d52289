//! Baselines that learn history representations from the RL loss alone:
//! recurrent I2Q and recurrent hysteretic independent Q-learning.

mod recurrent;

use ndarray::{Array2, Axis};

pub use recurrent::{
    hyst_losses, rec_i2q_losses, RecHystIqlAgent, RecHystNetworks, RecI2qAgent, RecI2qLosses, RecI2qNetworks,
    RecurrentConfig,
};

use crate::data::LocalTrajectory;
use crate::error::{config, usage, Result};

/// Learning rates for positive and negative temporal-difference errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HystereticRates {
    pub alpha: f64,
    pub beta: f64,
}

impl HystereticRates {
    /// Requires `alpha >= beta > 0`; equal rates give plain Q-learning.
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && alpha >= beta && alpha.is_finite()) {
            return Err(config(format!("hysteretic rates need alpha >= beta > 0, got {alpha} and {beta}")));
        }
        Ok(Self { alpha, beta })
    }

    /// `alpha` for positive errors, `beta` otherwise.
    pub fn rate(&self, td_error: f64) -> f64 {
        if td_error > 0.0 {
            self.alpha
        } else {
            self.beta
        }
    }
}

/// One tabular transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TabularTransition {
    pub obs: usize,
    pub action: usize,
    pub reward: f64,
    pub next_obs: usize,
    pub terminal: bool,
}

fn td_error(q: &[f64], n_actions: usize, tr: &TabularTransition, gamma: f64) -> f64 {
    let bootstrap = if tr.terminal {
        0.0
    } else {
        q[tr.next_obs * n_actions..(tr.next_obs + 1) * n_actions]
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    };
    tr.reward + gamma * bootstrap - q[tr.obs * n_actions + tr.action]
}

/// Hysteretic Q-learning step on a row-major `obs x action` table. Returns
/// the temporal-difference error.
pub fn hysteretic_update(q: &mut [f64], n_actions: usize, tr: &TabularTransition, rates: HystereticRates, gamma: f64) -> f64 {
    let psi = td_error(q, n_actions, tr, gamma);
    q[tr.obs * n_actions + tr.action] += rates.rate(psi) * psi;
    psi
}

/// Plain Q-learning step with learning rate `lr`.
pub fn q_learning_update(q: &mut [f64], n_actions: usize, tr: &TabularTransition, lr: f64, gamma: f64) -> f64 {
    let psi = td_error(q, n_actions, tr, gamma);
    q[tr.obs * n_actions + tr.action] += lr * psi;
    psi
}

/// Whole local episodes padded to a common length for recurrent processing.
#[derive(Clone, Debug)]
pub struct EpisodeBatch {
    /// `inputs[k]` rows are `[o_k, onehot(a_{k-1})]`, `k = 0..=T`.
    pub inputs: Vec<Array2<f64>>,
    /// `actions[k][b]`, zero on padding.
    pub actions: Vec<Vec<usize>>,
    /// `(B, T)` rewards, continuation flags and validity mask.
    pub rewards: Array2<f64>,
    pub not_done: Array2<f64>,
    pub mask: Array2<f64>,
}

impl EpisodeBatch {
    pub fn from_episodes(episodes: &[&LocalTrajectory], obs_dim: usize, n_actions: usize) -> Result<Self> {
        if episodes.is_empty() || episodes.iter().any(|e| e.is_empty()) {
            return Err(usage("an episode batch needs non-empty whole episodes"));
        }
        let b = episodes.len();
        let t_max = episodes.iter().map(|e| e.len()).max().expect("non-empty");
        let mut batch = Self {
            inputs: vec![Array2::zeros((b, obs_dim + n_actions)); t_max + 1],
            actions: vec![vec![0; b]; t_max],
            rewards: Array2::zeros((b, t_max)),
            not_done: Array2::ones((b, t_max)),
            mask: Array2::zeros((b, t_max)),
        };
        for (row, ep) in episodes.iter().enumerate() {
            if ep.observations.len() != ep.len() + 1 {
                return Err(usage("episode observations and actions are misaligned"));
            }
            for (k, o) in ep.observations.iter().enumerate() {
                if o.len() != obs_dim {
                    return Err(crate::Error::Shape {
                        what: "episode observation",
                        expected: obs_dim,
                        actual: o.len(),
                    });
                }
                for (c, &v) in o.iter().enumerate() {
                    batch.inputs[k][[row, c]] = v as f64;
                }
                if k > 0 {
                    batch.inputs[k][[row, obs_dim + ep.actions[k - 1]]] = 1.0;
                }
            }
            for k in 0..ep.len() {
                batch.actions[k][row] = ep.actions[k];
                batch.rewards[[row, k]] = ep.rewards[k];
                batch.mask[[row, k]] = 1.0;
            }
            if ep.terminated {
                batch.not_done[[row, ep.len() - 1]] = 0.0;
            }
        }
        Ok(batch)
    }

    pub fn batch_size(&self) -> usize {
        self.mask.nrows()
    }

    pub fn steps(&self) -> usize {
        self.mask.ncols()
    }

    /// Flattens `(B, T)` into transition rows `k * B + b`.
    fn flat(&self, values: &Array2<f64>) -> ndarray::Array1<f64> {
        values.t().iter().cloned().collect()
    }

    fn flat_actions(&self) -> Vec<usize> {
        self.actions.iter().flatten().cloned().collect()
    }
}

/// Stacks recurrent outputs `0..T` (current) and `1..=T` (next) into rows
/// `k * B + b`.
fn stack_steps(outs: &[Array2<f64>]) -> (Array2<f64>, Array2<f64>) {
    let t = outs.len() - 1;
    let cur: Vec<_> = outs[..t].iter().map(|a| a.view()).collect();
    let next: Vec<_> = outs[1..].iter().map(|a| a.view()).collect();
    (
        ndarray::concatenate(Axis(0), &cur).expect("equal widths"),
        ndarray::concatenate(Axis(0), &next).expect("equal widths"),
    )
}

/// Splits row gradients back into per-step blocks and accumulates them onto
/// the recurrent outputs `0..=T`.
fn unstack_steps(d_cur: &Array2<f64>, d_next: Option<&Array2<f64>>, batch: usize, steps: usize) -> Vec<Array2<f64>> {
    let width = d_cur.ncols();
    let mut out = vec![Array2::zeros((batch, width)); steps + 1];
    for k in 0..steps {
        let rows = ndarray::s![k * batch..(k + 1) * batch, ..];
        out[k] += &d_cur.slice(rows);
        if let Some(d) = d_next {
            out[k + 1] += &d.slice(rows);
        }
    }
    out
}

pub(crate) fn masked_mean_sq(pred: &ndarray::Array1<f64>, target: &ndarray::Array1<f64>, weight: &ndarray::Array1<f64>) -> (f64, ndarray::Array1<f64>) {
    let count = weight.iter().filter(|&&w| w > 0.0).count().max(1) as f64;
    let diff = pred - target;
    let loss = (&diff * &diff * weight).sum() / count;
    (loss, diff * weight * (2.0 / count))
}

#[cfg(test)]
mod tests;
