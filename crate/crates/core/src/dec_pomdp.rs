//! The Dec-POMDP abstraction `<S, O, A, R, P, W, gamma>` shared by every
//! environment and consumed by every learner.
//!
//! Feature vectors are `f32` so that datasets round-trip bit-exactly through
//! the on-disk format; learners widen them to `f64`.

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Global system state `s`. Holds everything needed to render every agent's
/// observation and the reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub features: Vec<f32>,
    pub step_index: usize,
}

/// Local observation `o_i = W(s)_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub features: Vec<f32>,
    pub agent_id: usize,
}

/// One discrete action per agent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointAction(pub Vec<usize>);

impl JointAction {
    pub fn new(actions: Vec<usize>) -> Self {
        Self(actions)
    }

    pub fn uniform(n_agents: usize, action: usize) -> Self {
        Self(vec![action; n_agents])
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub next_observations: Vec<Observation>,
    /// Joint reward, identical for every agent.
    pub reward: f64,
    /// True termination; TD targets do not bootstrap through it.
    pub terminated: bool,
    /// Episode cap reached; TD targets still bootstrap.
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// `G = sum_t gamma^t r_t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscountedReturn {
    pub value: f64,
    pub gamma: f64,
}

impl DiscountedReturn {
    pub fn from_rewards(rewards: &[f64], gamma: f64) -> Self {
        let value = rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc);
        Self { value, gamma }
    }
}

/// A cooperative, deterministic, partially observable multi-agent
/// environment.
///
/// All randomness is drawn at [`reset`](Environment::reset) from a stream
/// seeded by its argument; [`step`](Environment::step) is a pure function of
/// the current state and the joint action.
pub trait Environment: Send {
    /// Registry name (`"oracle"`, `"gathering"`, ...).
    fn name(&self) -> &'static str;
    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Index of the action that leaves an agent in place.
    fn void_action(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn obs_dim(&self, agent: usize) -> usize;
    fn max_steps(&self) -> usize;

    /// True when every agent receives the same observation, so one belief
    /// model can serve the whole team.
    fn shared_observations(&self) -> bool;

    fn reset(&mut self, seed: u64) -> (EnvState, Vec<Observation>);

    /// Advances the episode. Errors with [`Error::Usage`](crate::Error::Usage)
    /// when the episode has already ended or the action is malformed.
    fn step(&mut self, action: &JointAction) -> Result<StepResult>;

    /// The observation function. Pure in `state`.
    fn observe(&self, state: &EnvState) -> Vec<Observation>;

    /// The state features hidden from `agent`; the belief decoder's target.
    fn unobserved_features(&self, state: &EnvState, agent: usize) -> Vec<f32>;
    fn unobserved_dim(&self, agent: usize) -> usize;

    fn current_state(&self) -> &EnvState;

    /// Whether the current episode has terminated or been truncated.
    fn is_done(&self) -> bool;
}

/// Observation-only step result handed to stage-two learners. Carries no
/// state.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedStep {
    pub observations: Vec<Observation>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

/// Wraps an environment so that only observations and rewards leave it.
pub struct ObservedEnv<E: ?Sized> {
    inner: Box<E>,
}

impl ObservedEnv<dyn Environment> {
    pub fn new(inner: Box<dyn Environment>) -> Self {
        Self { inner }
    }

    pub fn n_agents(&self) -> usize {
        self.inner.n_agents()
    }

    pub fn n_actions(&self) -> usize {
        self.inner.n_actions()
    }

    pub fn obs_dim(&self, agent: usize) -> usize {
        self.inner.obs_dim(agent)
    }

    pub fn max_steps(&self) -> usize {
        self.inner.max_steps()
    }

    pub fn reset(&mut self, seed: u64) -> Vec<Observation> {
        self.inner.reset(seed).1
    }

    pub fn step(&mut self, action: &JointAction) -> Result<ObservedStep> {
        let result = self.inner.step(action)?;
        Ok(ObservedStep {
            observations: result.next_observations,
            reward: result.reward,
            terminated: result.terminated,
            truncated: result.truncated,
        })
    }
}
