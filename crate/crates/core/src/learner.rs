//! The contract between the training loop and one agent's learner.
//!
//! A learner is driven with its own observations and actions only, and is
//! updated from its own window onto the replay buffer. Nothing in this
//! interface carries an environment state or another agent's data.

use crate::checkpoint::Checkpoint;
use crate::data::{AgentView, BeliefCache};
use crate::error::Result;
use crate::seeding::Rng;

/// Mean losses of one update; `None` where an algorithm has no such loss or
/// skipped the update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossSummary {
    pub qss: Option<f64>,
    pub f: Option<f64>,
    pub q: Option<f64>,
}

pub trait AgentLearner: Send {
    /// Starts an episode at observation `o_0`.
    fn begin_episode(&mut self, observation: &[f32]) -> Result<()>;

    /// Epsilon-greedy action for the current history.
    fn act(&mut self, epsilon: f64, rng: &mut Rng) -> Result<usize>;

    /// Extends the history with the action taken and the next observation.
    fn observe(&mut self, action: usize, observation: &[f32]) -> Result<()>;

    /// Per-step cache to store alongside this episode's local trajectory.
    fn end_episode(&mut self) -> Option<BeliefCache>;

    /// One parameter update from this agent's replay window, followed by the
    /// target-network soft update.
    fn update(&mut self, view: AgentView<'_>) -> Result<LossSummary>;

    fn checkpoint(&self) -> Checkpoint;
}
