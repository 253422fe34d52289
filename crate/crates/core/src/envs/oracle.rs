//! Multi-agent Oracle: three treasure corners, one of which pays out, and an
//! oracle in the fourth corner that briefly reveals which.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::{self, Cell, MOVES_8};
use crate::dec_pomdp::{EnvState, Environment, JointAction, Observation, StepResult};
use crate::error::{config, usage, Result};
use crate::seeding;

/// Value written into the treasure slots of an observation while the correct
/// treasure is hidden.
pub const UNKNOWN: f32 = -1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub grid_size: usize,
    pub n_agents: usize,
    pub step_penalty: f64,
    pub treasure_reward: f64,
    /// Steps for which the correct treasure stays visible after a query.
    pub reveal_duration: u32,
    /// Place agents uniformly on non-corner cells instead of the centre.
    pub random_start: bool,
    pub max_steps: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            grid_size: 7,
            n_agents: 2,
            step_penalty: 0.01,
            treasure_reward: 1.0,
            reveal_duration: 1,
            random_start: false,
            max_steps: 40,
        }
    }
}

impl OracleConfig {
    fn validate(&self) -> Result<()> {
        if self.grid_size < 4 {
            return Err(config("oracle grid_size must be at least 4"));
        }
        if self.n_agents == 0 {
            return Err(config("oracle needs at least one agent"));
        }
        if !(self.step_penalty >= 0.0) || !(self.treasure_reward > 0.0) {
            return Err(config("oracle needs step_penalty >= 0 and treasure_reward > 0"));
        }
        if self.reveal_duration == 0 || self.max_steps == 0 {
            return Err(config("oracle reveal_duration and max_steps must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    agents: Vec<Cell>,
    correct: usize,
    reveal_remaining: u32,
}

pub struct OracleEnv {
    config: OracleConfig,
    size: i32,
    layout: Layout,
    state: EnvState,
    done: bool,
}

impl OracleEnv {
    pub fn new(config: OracleConfig) -> Result<Self> {
        config.validate()?;
        let size = config.grid_size as i32;
        let layout = Layout {
            agents: vec![(0, 0); config.n_agents],
            correct: 0,
            reveal_remaining: 0,
        };
        let mut env = Self {
            config,
            size,
            state: EnvState {
                features: Vec::new(),
                step_index: 0,
            },
            layout,
            done: true,
        };
        env.state = env.encode(&env.layout, 0);
        Ok(env)
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    /// Treasure corners in index order: bottom-left, top-left, bottom-right.
    pub fn treasure_cells(&self) -> [Cell; 3] {
        let m = self.size - 1;
        [(0, 0), (0, m), (m, 0)]
    }

    pub fn oracle_cell(&self) -> Cell {
        (self.size - 1, self.size - 1)
    }

    pub fn centre(&self) -> Cell {
        ((self.size - 1) / 2, (self.size - 1) / 2)
    }

    /// Treasure corners in normalized coordinates.
    pub fn treasure_coords(&self) -> [[f32; 2]; 3] {
        self.treasure_cells()
            .map(|c| [grid::normalize(c.0, self.size), grid::normalize(c.1, self.size)])
    }

    /// Index of the correct treasure encoded in `state`.
    pub fn correct_treasure(&self, state: &EnvState) -> usize {
        self.decode(state).correct
    }

    pub fn agent_cells(&self, state: &EnvState) -> Vec<Cell> {
        self.decode(state).agents
    }

    /// The action moving one step from `from` towards `to`.
    pub fn action_towards(&self, from: Cell, to: Cell) -> usize {
        let delta = ((to.0 - from.0).signum(), (to.1 - from.1).signum());
        MOVES_8
            .iter()
            .position(|&m| m == delta)
            .expect("every sign pair is a move")
    }

    fn encode(&self, layout: &Layout, step_index: usize) -> EnvState {
        let mut f = Vec::with_capacity(self.state_dim());
        for &(x, y) in &layout.agents {
            f.push(grid::normalize(x, self.size));
            f.push(grid::normalize(y, self.size));
        }
        let t = self.treasure_cells()[layout.correct];
        f.push(grid::normalize(t.0, self.size));
        f.push(grid::normalize(t.1, self.size));
        f.push(layout.reveal_remaining as f32);
        EnvState {
            features: f,
            step_index,
        }
    }

    fn decode(&self, state: &EnvState) -> Layout {
        let f = &state.features;
        let n = self.config.n_agents;
        let agents = (0..n)
            .map(|i| {
                (
                    grid::denormalize(f[2 * i], self.size),
                    grid::denormalize(f[2 * i + 1], self.size),
                )
            })
            .collect();
        let t = (
            grid::denormalize(f[2 * n], self.size),
            grid::denormalize(f[2 * n + 1], self.size),
        );
        let correct = self
            .treasure_cells()
            .iter()
            .position(|&c| c == t)
            .expect("state holds a treasure corner");
        Layout {
            agents,
            correct,
            reveal_remaining: f[2 * n + 2] as u32,
        }
    }
}

impl Environment for OracleEnv {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    fn n_actions(&self) -> usize {
        MOVES_8.len()
    }

    fn void_action(&self) -> usize {
        8
    }

    fn state_dim(&self) -> usize {
        2 * self.config.n_agents + 3
    }

    fn obs_dim(&self, _agent: usize) -> usize {
        2 * self.config.n_agents + 2
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps
    }

    fn shared_observations(&self) -> bool {
        true
    }

    fn reset(&mut self, seed: u64) -> (EnvState, Vec<Observation>) {
        let mut rng = seeding::rng(seed);
        let correct = rng.random_range(0..3);
        let agents = if self.config.random_start {
            let corners = [
                (0, 0),
                (0, self.size - 1),
                (self.size - 1, 0),
                (self.size - 1, self.size - 1),
            ];
            (0..self.config.n_agents)
                .map(|_| loop {
                    let c = (rng.random_range(0..self.size), rng.random_range(0..self.size));
                    if !corners.contains(&c) {
                        break c;
                    }
                })
                .collect()
        } else {
            vec![self.centre(); self.config.n_agents]
        };
        self.layout = Layout {
            agents,
            correct,
            reveal_remaining: 0,
        };
        self.state = self.encode(&self.layout, 0);
        self.done = false;
        let obs = self.observe(&self.state);
        (self.state.clone(), obs)
    }

    fn step(&mut self, action: &JointAction) -> Result<StepResult> {
        if self.done {
            return Err(usage("step called on a finished oracle episode"));
        }
        grid::check_joint_action(action, self.n_agents(), self.n_actions())?;
        let oracle = self.oracle_cell();
        let prev = self.layout.agents.clone();
        let moved: Vec<Cell> = prev
            .iter()
            .zip(action.as_slice())
            .map(|(&c, &a)| grid::clamp_move(c, MOVES_8[a], self.size))
            .collect();
        let queried = prev
            .iter()
            .zip(&moved)
            .any(|(&before, &after)| after == oracle && before != oracle);
        self.layout.reveal_remaining = if queried {
            self.config.reveal_duration
        } else {
            self.layout.reveal_remaining.saturating_sub(1)
        };
        self.layout.agents = moved;

        let target = self.treasure_cells()[self.layout.correct];
        let found = self.layout.agents.contains(&target);
        let mut reward = -self.config.step_penalty;
        if found {
            reward += self.config.treasure_reward;
        }
        let step_index = self.state.step_index + 1;
        let truncated = step_index >= self.config.max_steps;
        self.state = self.encode(&self.layout, step_index);
        self.done = found || truncated;
        Ok(StepResult {
            next_observations: self.observe(&self.state),
            next_state: self.state.clone(),
            reward,
            terminated: found,
            truncated,
        })
    }

    fn observe(&self, state: &EnvState) -> Vec<Observation> {
        let n = self.config.n_agents;
        let mut features = state.features[..2 * n].to_vec();
        let layout = self.decode(state);
        if layout.reveal_remaining > 0 {
            features.extend_from_slice(&state.features[2 * n..2 * n + 2]);
        } else {
            features.extend_from_slice(&[UNKNOWN, UNKNOWN]);
        }
        (0..n)
            .map(|agent_id| Observation {
                features: features.clone(),
                agent_id,
            })
            .collect()
    }

    fn unobserved_features(&self, state: &EnvState, _agent: usize) -> Vec<f32> {
        let n = self.config.n_agents;
        state.features[2 * n..2 * n + 2].to_vec()
    }

    fn unobserved_dim(&self, _agent: usize) -> usize {
        2
    }

    fn current_state(&self) -> &EnvState {
        &self.state
    }

    fn is_done(&self) -> bool {
        self.done
    }
}
