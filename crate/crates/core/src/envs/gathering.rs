//! Gathering: agents collect equally valuable treasures; the observation is
//! the union of the agents' local visibility windows.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::grid::{self, Cell, MOVES_4};
use crate::dec_pomdp::{EnvState, Environment, JointAction, Observation, StepResult};
use crate::error::{config, usage, Result};
use crate::seeding;

pub const EMPTY: f32 = 0.0;
pub const TREASURE: f32 = 1.0;
/// Agent `i` is drawn as `AGENT_BASE + i`.
pub const AGENT_BASE: f32 = 2.0;
pub const UNSEEN: f32 = -1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatheringConfig {
    pub grid_size: usize,
    pub n_agents: usize,
    pub n_treasures: usize,
    /// Chebyshev radius.
    pub visibility_radius: usize,
    pub step_penalty: f64,
    pub treasure_reward: f64,
    pub max_steps: usize,
}

impl Default for GatheringConfig {
    fn default() -> Self {
        Self {
            grid_size: 10,
            n_agents: 2,
            n_treasures: 5,
            visibility_radius: 2,
            step_penalty: 0.01,
            treasure_reward: 1.0,
            max_steps: 100,
        }
    }
}

impl GatheringConfig {
    fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.n_treasures == 0 || self.visibility_radius == 0 {
            return Err(config("gathering needs agents, treasures and a positive radius"));
        }
        if self.grid_size < 2 || self.grid_size * self.grid_size < self.n_agents + self.n_treasures {
            return Err(config("gathering grid cannot hold all agents and treasures"));
        }
        if !(self.step_penalty >= 0.0) || !(self.treasure_reward > 0.0) || self.max_steps == 0 {
            return Err(config("gathering rewards or episode cap out of range"));
        }
        Ok(())
    }
}

pub struct GatheringEnv {
    config: GatheringConfig,
    size: i32,
    agents: Vec<Cell>,
    treasures: Vec<bool>,
    state: EnvState,
    done: bool,
}

impl GatheringEnv {
    pub fn new(config: GatheringConfig) -> Result<Self> {
        config.validate()?;
        let size = config.grid_size as i32;
        let cells = config.grid_size * config.grid_size;
        Ok(Self {
            agents: vec![(0, 0); config.n_agents],
            treasures: vec![false; cells],
            config,
            size,
            state: EnvState {
                features: vec![EMPTY; cells],
                step_index: 0,
            },
            done: true,
        })
    }

    pub fn remaining_treasures(&self) -> usize {
        self.treasures.iter().filter(|&&t| t).count()
    }

    pub fn agent_cells(&self) -> &[Cell] {
        &self.agents
    }

    pub fn treasure_cells(&self) -> Vec<Cell> {
        self.treasures
            .iter()
            .enumerate()
            .filter(|(_, &t)| t)
            .map(|(i, _)| grid::cell_of(i, self.size))
            .collect()
    }

    fn encode(&self, step_index: usize) -> EnvState {
        let mut f = vec![EMPTY; self.treasures.len()];
        for (i, &t) in self.treasures.iter().enumerate() {
            if t {
                f[i] = TREASURE;
            }
        }
        for (k, &c) in self.agents.iter().enumerate() {
            f[grid::index(c, self.size)] = AGENT_BASE + k as f32;
        }
        EnvState {
            features: f,
            step_index,
        }
    }

    fn agents_in(&self, state: &EnvState) -> Vec<Cell> {
        let mut agents = vec![(0, 0); self.config.n_agents];
        for (i, &code) in state.features.iter().enumerate() {
            if code >= AGENT_BASE {
                agents[(code - AGENT_BASE) as usize] = grid::cell_of(i, self.size);
            }
        }
        agents
    }

    fn visible_mask(&self, state: &EnvState) -> Vec<bool> {
        let agents = self.agents_in(state);
        let r = self.config.visibility_radius as i32;
        (0..state.features.len())
            .map(|i| {
                let c = grid::cell_of(i, self.size);
                agents.iter().any(|&a| grid::chebyshev(a, c) <= r)
            })
            .collect()
    }
}

impl Environment for GatheringEnv {
    fn name(&self) -> &'static str {
        "gathering"
    }

    fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    fn n_actions(&self) -> usize {
        MOVES_4.len()
    }

    fn void_action(&self) -> usize {
        4
    }

    fn state_dim(&self) -> usize {
        self.treasures.len()
    }

    fn obs_dim(&self, _agent: usize) -> usize {
        self.treasures.len()
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps
    }

    fn shared_observations(&self) -> bool {
        true
    }

    fn reset(&mut self, seed: u64) -> (EnvState, Vec<Observation>) {
        let mut rng = seeding::rng(seed);
        let cells = self.treasures.len();
        let picks = index::sample(&mut rng, cells, self.config.n_agents + self.config.n_treasures);
        let picks: Vec<usize> = picks.into_iter().collect();
        let (agent_cells, treasure_cells) = picks.split_at(self.config.n_agents);
        self.agents = agent_cells.iter().map(|&i| grid::cell_of(i, self.size)).collect();
        self.treasures = vec![false; cells];
        for &i in treasure_cells {
            self.treasures[i] = true;
        }
        self.state = self.encode(0);
        self.done = false;
        (self.state.clone(), self.observe(&self.state))
    }

    fn step(&mut self, action: &JointAction) -> Result<StepResult> {
        if self.done {
            return Err(usage("step called on a finished gathering episode"));
        }
        grid::check_joint_action(action, self.n_agents(), self.n_actions())?;
        let proposed: Vec<Cell> = self
            .agents
            .iter()
            .zip(action.as_slice())
            .map(|(&c, &a)| grid::clamp_move(c, MOVES_4[a], self.size))
            .collect();
        let (resolved, _) = grid::resolve_moves(&self.agents, &proposed);
        self.agents = resolved;

        let mut collected = 0;
        for &c in &self.agents {
            let i = grid::index(c, self.size);
            if self.treasures[i] {
                self.treasures[i] = false;
                collected += 1;
            }
        }
        let reward = collected as f64 * self.config.treasure_reward - self.config.step_penalty;
        let terminated = self.remaining_treasures() == 0;
        let step_index = self.state.step_index + 1;
        let truncated = step_index >= self.config.max_steps;
        self.state = self.encode(step_index);
        self.done = terminated || truncated;
        Ok(StepResult {
            next_observations: self.observe(&self.state),
            next_state: self.state.clone(),
            reward,
            terminated,
            truncated,
        })
    }

    fn observe(&self, state: &EnvState) -> Vec<Observation> {
        let mask = self.visible_mask(state);
        let features: Vec<f32> = state
            .features
            .iter()
            .zip(&mask)
            .map(|(&v, &seen)| if seen { v } else { UNSEEN })
            .collect();
        (0..self.config.n_agents)
            .map(|agent_id| Observation {
                features: features.clone(),
                agent_id,
            })
            .collect()
    }

    /// True codes of the cells no agent can currently see; visible cells are
    /// reported as [`EMPTY`].
    fn unobserved_features(&self, state: &EnvState, _agent: usize) -> Vec<f32> {
        let mask = self.visible_mask(state);
        state
            .features
            .iter()
            .zip(&mask)
            .map(|(&v, &seen)| if seen { EMPTY } else { v })
            .collect()
    }

    fn unobserved_dim(&self, _agent: usize) -> usize {
        self.treasures.len()
    }

    fn current_state(&self) -> &EnvState {
        &self.state
    }

    fn is_done(&self) -> bool {
        self.done
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const VOID: usize = 4;

    fn env_with(agents: Vec<Cell>, treasures: &[Cell]) -> GatheringEnv {
        let mut e = GatheringEnv::new(GatheringConfig {
            n_treasures: treasures.len().max(1),
            ..Default::default()
        })
        .unwrap();
        e.reset(0);
        e.agents = agents;
        e.treasures = vec![false; 100];
        for &t in treasures {
            e.treasures[grid::index(t, 10)] = true;
        }
        e.state = e.encode(0);
        e
    }

    #[test]
    fn reset_places_everything_in_bounds_on_distinct_cells() {
        let mut e = GatheringEnv::new(GatheringConfig::default()).unwrap();
        for seed in 0..30 {
            e.reset(seed);
            let mut cells = e.agent_cells().to_vec();
            cells.extend(e.treasure_cells());
            assert_eq!(cells.len(), 7);
            for (i, c) in cells.iter().enumerate() {
                assert!((0..10).contains(&c.0) && (0..10).contains(&c.1));
                assert!(!cells[i + 1..].contains(c));
            }
        }
    }

    #[test]
    fn five_actions_and_void_keeps_agents() {
        let mut e = env_with(vec![(1, 1), (8, 8)], &[(5, 5)]);
        assert_eq!(e.n_actions(), 5);
        e.step(&JointAction(vec![VOID, VOID])).unwrap();
        assert_eq!(e.agent_cells(), &[(1, 1), (8, 8)]);
    }

    #[test]
    fn treasure_seen_by_one_agent_is_in_the_shared_observation() {
        let e = env_with(vec![(1, 1), (8, 8)], &[(3, 2)]);
        let obs = e.observe(e.current_state());
        let i = grid::index((3, 2), 10);
        for o in &obs {
            assert_eq!(o.features[i], TREASURE);
        }
        assert_eq!(obs[0], Observation { agent_id: 0, ..obs[1].clone() });
    }

    #[test]
    fn cells_outside_every_radius_are_masked() {
        let e = env_with(vec![(1, 1), (8, 8)], &[(5, 5)]);
        let obs = e.observe(e.current_state());
        let i = grid::index((5, 5), 10);
        assert!(obs.iter().all(|o| o.features[i] == UNSEEN));
        let hidden = e.unobserved_features(e.current_state(), 0);
        assert_eq!(hidden[i], TREASURE);
        assert_eq!(hidden[grid::index((1, 1), 10)], EMPTY);
    }

    #[test]
    fn collecting_a_treasure_pays_reward_minus_step_penalty() {
        let mut e = env_with(vec![(1, 1), (8, 8)], &[(2, 1), (6, 6)]);
        // action 1 = east
        let r = e.step(&JointAction(vec![1, VOID])).unwrap();
        assert!((r.reward - (1.0 - 0.01)).abs() < 1e-12);
        assert!(!r.terminated);
        assert_eq!(e.remaining_treasures(), 1);
    }

    #[test]
    fn last_treasure_terminates() {
        let mut e = env_with(vec![(1, 1), (8, 8)], &[(2, 1)]);
        let r = e.step(&JointAction(vec![1, VOID])).unwrap();
        assert!(r.terminated);
        assert_eq!(e.remaining_treasures(), 0);
    }

    #[test]
    fn truncates_at_one_hundred_steps() {
        let mut e = GatheringEnv::new(GatheringConfig::default()).unwrap();
        e.reset(9);
        let mut n = 0;
        while !e.is_done() {
            e.step(&JointAction(vec![VOID, VOID])).unwrap();
            n += 1;
        }
        assert_eq!(n, 100);
    }
}
