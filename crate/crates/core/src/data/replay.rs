//! Episode replay for the RL stage. Records hold agent-local data only.

use std::collections::VecDeque;

use rand::Rng;

use crate::belief::History;
use crate::error::{usage, Result};

pub const DEFAULT_CAPACITY: usize = 10_000;

/// Frozen-belief-model outputs cached alongside a local trajectory:
/// `hiddens[t]` is the history summary after `o_t`, `beliefs[t]` is `b(h_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BeliefCache {
    pub hiddens: Vec<Vec<f64>>,
    pub beliefs: Vec<Vec<f64>>,
}

/// One agent's view of an episode: `T + 1` observations, `T` actions.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalTrajectory {
    pub observations: Vec<Vec<f32>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub terminated: bool,
    pub belief: Option<BeliefCache>,
}

impl LocalTrajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// History ending at `o_t`.
    pub fn history(&self, t: usize) -> History {
        History::from_trajectory(&self.observations[..=t], &self.actions[..t])
    }
}

/// Every agent's local trajectory of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct TeamEpisode {
    agents: Vec<LocalTrajectory>,
}

impl TeamEpisode {
    pub fn new(agents: Vec<LocalTrajectory>) -> Self {
        Self { agents }
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn len(&self) -> usize {
        self.agents.first().map_or(0, LocalTrajectory::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A sampled step of one agent's trajectory, referenced rather than copied.
#[derive(Clone, Copy, Debug)]
pub struct LocalTransition<'a> {
    pub trajectory: &'a LocalTrajectory,
    pub t: usize,
}

impl<'a> LocalTransition<'a> {
    pub fn observation(&self) -> &'a [f32] {
        &self.trajectory.observations[self.t]
    }

    pub fn action(&self) -> usize {
        self.trajectory.actions[self.t]
    }

    pub fn reward(&self) -> f64 {
        self.trajectory.rewards[self.t]
    }

    pub fn next_observation(&self) -> &'a [f32] {
        &self.trajectory.observations[self.t + 1]
    }

    /// True only on the final step of a terminated episode.
    pub fn terminal(&self) -> bool {
        self.trajectory.terminated && self.t + 1 == self.trajectory.len()
    }

    /// The `t` (observation, action) pairs that precede `o_t`.
    pub fn prior_pairs(&self) -> impl Iterator<Item = (&'a [f32], usize)> + 'a {
        let traj = self.trajectory;
        (0..self.t).map(move |k| (traj.observations[k].as_slice(), traj.actions[k]))
    }

    pub fn history(&self) -> History {
        self.trajectory.history(self.t)
    }
}

/// FIFO ring of team episodes.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<TeamEpisode>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(usage("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(1024)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn push(&mut self, episode: TeamEpisode) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    /// Read-only access to agent `agent`'s trajectories.
    pub fn view(&self, agent: usize) -> AgentView<'_> {
        AgentView { buffer: self, agent }
    }
}

/// One agent's window onto the replay buffer.
#[derive(Clone, Copy, Debug)]
pub struct AgentView<'a> {
    buffer: &'a ReplayBuffer,
    agent: usize,
}

impl<'a> AgentView<'a> {
    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn n_episodes(&self) -> usize {
        self.buffer.len()
    }

    /// Mean number of transitions per stored episode.
    pub fn mean_episode_len(&self) -> f64 {
        if self.buffer.is_empty() {
            return 0.0;
        }
        let total: usize = (0..self.buffer.len()).map(|k| self.trajectory(k).len()).sum();
        total as f64 / self.buffer.len() as f64
    }

    fn trajectory(&self, k: usize) -> &'a LocalTrajectory {
        &self.buffer.episodes[k].agents[self.agent]
    }

    /// Whole local episodes, drawn uniformly with replacement.
    pub fn sample_episodes<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&'a LocalTrajectory>> {
        if self.buffer.is_empty() {
            return Err(usage("cannot sample from an empty replay buffer"));
        }
        Ok((0..n)
            .map(|_| self.trajectory(rng.random_range(0..self.buffer.len())))
            .collect())
    }

    /// Transitions drawn uniformly (with replacement) over every stored step.
    pub fn sample_transitions<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<LocalTransition<'a>>> {
        let mut cumulative = Vec::with_capacity(self.buffer.len());
        let mut total = 0usize;
        for k in 0..self.buffer.len() {
            total += self.trajectory(k).len();
            cumulative.push(total);
        }
        if total == 0 {
            return Err(usage("cannot sample from an empty replay buffer"));
        }
        Ok((0..n)
            .map(|_| {
                let u = rng.random_range(0..total);
                let k = cumulative.partition_point(|&c| c <= u);
                let start = if k == 0 { 0 } else { cumulative[k - 1] };
                LocalTransition {
                    trajectory: self.trajectory(k),
                    t: u - start,
                }
            })
            .collect())
    }
}
