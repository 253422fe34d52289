//! Escape room: collect every key as a team, then unlock the exit. The map is
//! uncovered progressively and stays uncovered.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::grid::{self, Cell, MOVES_4};
use crate::dec_pomdp::{EnvState, Environment, JointAction, Observation, StepResult};
use crate::error::{config, usage, Result};
use crate::seeding;

pub const EMPTY: f32 = 0.0;
pub const KEY: f32 = 1.0;
pub const EXIT: f32 = 2.0;
/// Agent `i` is drawn as `AGENT_BASE + i`.
pub const AGENT_BASE: f32 = 3.0;
pub const UNDISCOVERED: f32 = -1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EscapeConfig {
    pub grid_size: usize,
    pub n_agents: usize,
    pub n_keys: usize,
    /// Chebyshev radius.
    pub visibility_radius: usize,
    pub step_penalty: f64,
    pub collision_penalty: f64,
    pub exit_reward: f64,
    pub max_steps: usize,
}

impl Default for EscapeConfig {
    fn default() -> Self {
        Self {
            grid_size: 10,
            n_agents: 2,
            n_keys: 3,
            visibility_radius: 2,
            step_penalty: 0.01,
            collision_penalty: 0.1,
            exit_reward: 1.0,
            max_steps: 100,
        }
    }
}

impl EscapeConfig {
    fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.n_keys == 0 || self.visibility_radius == 0 {
            return Err(config("escape needs agents, keys and a positive radius"));
        }
        if self.grid_size < 2 || self.grid_size * self.grid_size < self.n_agents + self.n_keys + 1 {
            return Err(config("escape grid cannot hold agents, keys and the exit"));
        }
        if !(self.step_penalty >= 0.0)
            || !(self.collision_penalty >= 0.0)
            || !(self.exit_reward > 0.0)
            || self.max_steps == 0
        {
            return Err(config("escape rewards or episode cap out of range"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    items: Vec<f32>,
    revealed: Vec<bool>,
    agents: Vec<Cell>,
}

#[derive(Clone)]
pub struct EscapeEnv {
    config: EscapeConfig,
    size: i32,
    layout: Layout,
    state: EnvState,
    done: bool,
}

impl EscapeEnv {
    pub fn new(config: EscapeConfig) -> Result<Self> {
        config.validate()?;
        let size = config.grid_size as i32;
        let cells = config.grid_size * config.grid_size;
        let layout = Layout {
            items: vec![EMPTY; cells],
            revealed: vec![false; cells],
            agents: vec![(0, 0); config.n_agents],
        };
        let mut env = Self {
            config,
            size,
            layout,
            state: EnvState {
                features: Vec::new(),
                step_index: 0,
            },
            done: true,
        };
        env.state = env.encode(&env.layout, 0);
        Ok(env)
    }

    fn cells(&self) -> usize {
        self.layout.items.len()
    }

    pub fn keys_remaining(&self) -> usize {
        self.layout.items.iter().filter(|&&v| v == KEY).count()
    }

    pub fn keys_held(&self) -> usize {
        self.config.n_keys - self.keys_remaining()
    }

    pub fn revealed_mask(&self, state: &EnvState) -> Vec<bool> {
        self.decode(state).revealed
    }

    pub fn exit_cell(&self) -> Cell {
        let i = self
            .layout
            .items
            .iter()
            .position(|&v| v == EXIT)
            .expect("layout has an exit");
        grid::cell_of(i, self.size)
    }

    pub fn key_cells(&self) -> Vec<Cell> {
        self.layout
            .items
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == KEY)
            .map(|(i, _)| grid::cell_of(i, self.size))
            .collect()
    }

    pub fn agent_cells(&self) -> &[Cell] {
        &self.layout.agents
    }

    fn reveal_around(&self, layout: &mut Layout) {
        let r = self.config.visibility_radius as i32;
        for i in 0..layout.revealed.len() {
            let c = grid::cell_of(i, self.size);
            if layout.agents.iter().any(|&a| grid::chebyshev(a, c) <= r) {
                layout.revealed[i] = true;
            }
        }
    }

    fn encode(&self, layout: &Layout, step_index: usize) -> EnvState {
        let mut f = layout.items.clone();
        f.extend(layout.revealed.iter().map(|&b| if b { 1.0 } else { 0.0 }));
        for &(x, y) in &layout.agents {
            f.push(grid::normalize(x, self.size));
            f.push(grid::normalize(y, self.size));
        }
        EnvState {
            features: f,
            step_index,
        }
    }

    fn decode(&self, state: &EnvState) -> Layout {
        let cells = self.cells();
        let f = &state.features;
        let agents = (0..self.config.n_agents)
            .map(|i| {
                let base = 2 * cells + 2 * i;
                (
                    grid::denormalize(f[base], self.size),
                    grid::denormalize(f[base + 1], self.size),
                )
            })
            .collect();
        Layout {
            items: f[..cells].to_vec(),
            revealed: f[cells..2 * cells].iter().map(|&v| v > 0.5).collect(),
            agents,
        }
    }
}

impl Environment for EscapeEnv {
    fn name(&self) -> &'static str {
        "escape"
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
        2 * self.cells() + 2 * self.config.n_agents
    }

    fn obs_dim(&self, _agent: usize) -> usize {
        self.cells()
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps
    }

    fn shared_observations(&self) -> bool {
        true
    }

    fn reset(&mut self, seed: u64) -> (EnvState, Vec<Observation>) {
        let mut rng = seeding::rng(seed);
        let cells = self.cells();
        let n_agents = self.config.n_agents;
        let picks: Vec<usize> = index::sample(&mut rng, cells, n_agents + self.config.n_keys + 1)
            .into_iter()
            .collect();
        let mut layout = Layout {
            items: vec![EMPTY; cells],
            revealed: vec![false; cells],
            agents: picks[..n_agents]
                .iter()
                .map(|&i| grid::cell_of(i, self.size))
                .collect(),
        };
        for &k in &picks[n_agents..n_agents + self.config.n_keys] {
            layout.items[k] = KEY;
        }
        layout.items[picks[n_agents + self.config.n_keys]] = EXIT;
        self.reveal_around(&mut layout);
        self.state = self.encode(&layout, 0);
        self.layout = layout;
        self.done = false;
        (self.state.clone(), self.observe(&self.state))
    }

    fn step(&mut self, action: &JointAction) -> Result<StepResult> {
        if self.done {
            return Err(usage("step called on a finished escape episode"));
        }
        grid::check_joint_action(action, self.n_agents(), self.n_actions())?;
        let prev = self.layout.agents.clone();
        let proposed: Vec<Cell> = prev
            .iter()
            .zip(action.as_slice())
            .map(|(&c, &a)| grid::clamp_move(c, MOVES_4[a], self.size))
            .collect();
        let (resolved, collisions) = grid::resolve_moves(&prev, &proposed);

        let mut layout = self.layout.clone();
        layout.agents = resolved;
        for &c in &layout.agents {
            let i = grid::index(c, self.size);
            if layout.items[i] == KEY {
                layout.items[i] = EMPTY;
            }
        }
        let all_keys = layout.items.iter().all(|&v| v != KEY);
        let exit = self.exit_cell();
        let entered_exit = prev
            .iter()
            .zip(&layout.agents)
            .any(|(&before, &after)| after == exit && before != exit);
        let terminated = all_keys && entered_exit;
        self.reveal_around(&mut layout);

        let mut reward = -self.config.step_penalty - collisions as f64 * self.config.collision_penalty;
        if terminated {
            reward += self.config.exit_reward;
        }
        let step_index = self.state.step_index + 1;
        let truncated = step_index >= self.config.max_steps;
        self.state = self.encode(&layout, step_index);
        self.layout = layout;
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
        let layout = self.decode(state);
        let mut features: Vec<f32> = layout
            .items
            .iter()
            .zip(&layout.revealed)
            .map(|(&v, &seen)| if seen { v } else { UNDISCOVERED })
            .collect();
        for (k, &c) in layout.agents.iter().enumerate() {
            features[grid::index(c, self.size)] = AGENT_BASE + k as f32;
        }
        (0..self.config.n_agents)
            .map(|agent_id| Observation {
                features: features.clone(),
                agent_id,
            })
            .collect()
    }

    /// Item codes of undiscovered cells; discovered cells read [`EMPTY`].
    fn unobserved_features(&self, state: &EnvState, _agent: usize) -> Vec<f32> {
        let layout = self.decode(state);
        layout
            .items
            .iter()
            .zip(&layout.revealed)
            .map(|(&v, &seen)| if seen { EMPTY } else { v })
            .collect()
    }

    fn unobserved_dim(&self, _agent: usize) -> usize {
        self.cells()
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
    use rand::Rng;

    const VOID: usize = 4;
    const EAST: usize = 1;
    const WEST: usize = 3;

    fn fixed(agents: Vec<Cell>, keys: &[Cell], exit: Cell) -> EscapeEnv {
        let mut e = EscapeEnv::new(EscapeConfig {
            n_keys: keys.len(),
            ..Default::default()
        })
        .unwrap();
        e.reset(0);
        let mut layout = Layout {
            items: vec![EMPTY; 100],
            revealed: vec![false; 100],
            agents,
        };
        for &k in keys {
            layout.items[grid::index(k, 10)] = KEY;
        }
        layout.items[grid::index(exit, 10)] = EXIT;
        e.reveal_around(&mut layout);
        e.state = e.encode(&layout, 0);
        e.layout = layout;
        e
    }

    #[test]
    fn exit_without_all_keys_does_not_unlock() {
        let mut e = fixed(vec![(0, 0), (9, 9)], &[(5, 5), (6, 6)], (1, 0));
        let r = e.step(&JointAction(vec![EAST, VOID])).unwrap();
        assert!(!r.terminated);
        assert!(r.reward < 0.0);
        assert_eq!(e.agent_cells()[0], (1, 0));
    }

    #[test]
    fn keys_are_pooled_across_agents_and_unlock_the_exit() {
        // Agent 1 grabs the only key while agent 0 waits beside the exit.
        let mut e = fixed(vec![(0, 0), (8, 8)], &[(9, 8)], (1, 0));
        let r = e.step(&JointAction(vec![VOID, EAST])).unwrap();
        assert_eq!(e.keys_held(), 1);
        assert!(!r.terminated);
        let r = e.step(&JointAction(vec![EAST, VOID])).unwrap();
        assert!(r.terminated);
        assert!((r.reward - (1.0 - 0.01)).abs() < 1e-12);
    }

    #[test]
    fn collision_costs_each_occurrence_and_bounces() {
        let mut e = fixed(vec![(2, 0), (4, 0)], &[(9, 9)], (0, 9));
        let r = e.step(&JointAction(vec![EAST, WEST])).unwrap();
        assert!((r.reward - (-0.01 - 0.1)).abs() < 1e-12);
        assert_eq!(e.agent_cells(), &[(2, 0), (4, 0)]);
    }

    #[test]
    fn undiscovered_cells_use_the_default_code() {
        let e = fixed(vec![(0, 0), (1, 0)], &[(9, 9)], (8, 8));
        let obs = e.observe(e.current_state());
        assert_eq!(obs[0].features[grid::index((9, 9), 10)], UNDISCOVERED);
        assert_eq!(obs[0].features[grid::index((0, 0), 10)], AGENT_BASE);
        assert_eq!(obs[0].features[grid::index((1, 0), 10)], AGENT_BASE + 1.0);
        let hidden = e.unobserved_features(e.current_state(), 0);
        assert_eq!(hidden[grid::index((9, 9), 10)], KEY);
        assert_eq!(hidden[grid::index((8, 8), 10)], EXIT);
    }

    #[test]
    fn revealed_area_is_never_obscured_again() {
        let mut e = EscapeEnv::new(EscapeConfig::default()).unwrap();
        let mut rng = seeding::rng(99);
        for seed in 0..20 {
            let (s, _) = e.reset(seed);
            let mut prev = e.revealed_mask(&s);
            while !e.is_done() {
                let a = (0..2).map(|_| rng.random_range(0..5)).collect();
                let r = e.step(&JointAction(a)).unwrap();
                let now = e.revealed_mask(&r.next_state);
                for (was, is) in prev.iter().zip(&now) {
                    assert!(!was || *is);
                }
                // once discovered, a cell's item code stays in the observation
                for (i, &seen) in now.iter().enumerate() {
                    if seen {
                        assert_ne!(r.next_observations[0].features[i], UNDISCOVERED);
                    }
                }
                prev = now;
            }
        }
    }

    /// Every joint trajectory of up to four steps on a 4x4 room: a positive
    /// reward only ever follows the collection of every key.
    #[test]
    fn exhaustive_small_room_never_unlocks_early() {
        let config = EscapeConfig {
            grid_size: 4,
            n_agents: 2,
            n_keys: 2,
            visibility_radius: 1,
            ..Default::default()
        };
        let mut unlocks = 0usize;
        let mut nodes = 0usize;
        fn dfs(env: &EscapeEnv, depth: usize, unlocks: &mut usize, nodes: &mut usize) {
            if depth == 0 || env.is_done() {
                return;
            }
            for a0 in 0..5 {
                for a1 in 0..5 {
                    let mut child = env.clone();
                    let r = child.step(&JointAction(vec![a0, a1])).unwrap();
                    *nodes += 1;
                    if r.reward > 0.0 || r.terminated {
                        assert_eq!(child.keys_remaining(), 0);
                        assert!(r.terminated && r.reward > 0.0);
                        *unlocks += 1;
                    }
                    dfs(&child, depth - 1, unlocks, nodes);
                }
            }
        }
        for seed in 0..3 {
            let mut env = EscapeEnv::new(config.clone()).unwrap();
            env.reset(seed);
            dfs(&env, 4, &mut unlocks, &mut nodes);
        }
        assert!(nodes > 500_000, "searched {nodes} nodes");
        assert!(unlocks > 0, "search should find at least one legal unlock");
    }

    #[test]
    fn truncates_at_one_hundred_steps() {
        let mut e = EscapeEnv::new(EscapeConfig::default()).unwrap();
        e.reset(2);
        let mut n = 0;
        while !e.is_done() {
            e.step(&JointAction(vec![VOID, VOID])).unwrap();
            n += 1;
        }
        assert_eq!(n, 100);
    }
}
