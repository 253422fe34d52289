//! Coordinated HoneyComb: agents leave the centre of a hexagonal field for
//! one of six corner reward fields. Only the informed agents know which
//! fields pay more; crowding one field multiplies its payout.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dec_pomdp::{EnvState, Environment, JointAction, Observation, StepResult};
use crate::error::{config, usage, Result};
use crate::seeding;

/// Axial hex coordinate.
pub type HexCoord = (i32, i32);

/// Six neighbour directions, then void.
const HEX_MOVES: [HexCoord; 7] = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1), (0, 0)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoneycombConfig {
    /// Number of hex rings around the centre.
    pub radius: usize,
    pub n_agents: usize,
    /// Agents `0..n_informed` observe the high-reward fields.
    pub n_informed: usize,
    pub n_high_fields: usize,
    pub base_reward: f64,
    pub high_reward: f64,
    /// Each of `k` agents on one field earns `reward * factor^(k-1)`.
    pub group_bonus_factor: f64,
    pub max_steps: usize,
}

impl Default for HoneycombConfig {
    fn default() -> Self {
        Self {
            radius: 5,
            n_agents: 10,
            n_informed: 2,
            n_high_fields: 2,
            base_reward: 1.0,
            high_reward: 2.0,
            group_bonus_factor: 1.5,
            max_steps: 25,
        }
    }
}

impl HoneycombConfig {
    fn validate(&self) -> Result<()> {
        if self.radius == 0 || self.n_agents == 0 || self.max_steps == 0 {
            return Err(config("honeycomb needs a positive radius, agents and episode cap"));
        }
        if self.n_informed > self.n_agents {
            return Err(config("honeycomb n_informed exceeds n_agents"));
        }
        if self.n_high_fields == 0 || self.n_high_fields > 6 {
            return Err(config("honeycomb n_high_fields must lie in 1..=6"));
        }
        if !(self.base_reward > 0.0 && self.high_reward > self.base_reward) {
            return Err(config("honeycomb needs 0 < base_reward < high_reward"));
        }
        if !(self.group_bonus_factor > 1.0) {
            return Err(config("honeycomb group_bonus_factor must exceed 1"));
        }
        Ok(())
    }
}

pub struct HoneycombEnv {
    config: HoneycombConfig,
    radius: i32,
    agents: Vec<HexCoord>,
    high: Vec<usize>,
    state: EnvState,
    done: bool,
}

impl HoneycombEnv {
    pub fn new(config: HoneycombConfig) -> Result<Self> {
        config.validate()?;
        let radius = config.radius as i32;
        let mut env = Self {
            agents: vec![(0, 0); config.n_agents],
            high: (0..config.n_high_fields).collect(),
            radius,
            config,
            state: EnvState {
                features: Vec::new(),
                step_index: 0,
            },
            done: true,
        };
        env.state = env.encode(0);
        Ok(env)
    }

    pub fn config(&self) -> &HoneycombConfig {
        &self.config
    }

    /// The six reward fields, in the order of the hex directions.
    pub fn fields(&self) -> [HexCoord; 6] {
        let r = self.radius;
        [(r, 0), (r, -r), (0, -r), (-r, 0), (-r, r), (0, r)]
    }

    pub fn high_fields(&self) -> Vec<HexCoord> {
        let fields = self.fields();
        self.high.iter().map(|&k| fields[k]).collect()
    }

    pub fn agent_cells(&self) -> &[HexCoord] {
        &self.agents
    }

    pub fn is_informed(&self, agent: usize) -> bool {
        agent < self.config.n_informed
    }

    fn inside(&self, c: HexCoord) -> bool {
        c.0.abs().max(c.1.abs()).max((c.0 + c.1).abs()) <= self.radius
    }

    fn norm(&self, v: i32) -> f32 {
        (v + self.radius) as f32 / (2 * self.radius) as f32
    }

    fn denorm(&self, v: f32) -> i32 {
        (v * (2 * self.radius) as f32).round() as i32 - self.radius
    }

    fn push_coord(&self, out: &mut Vec<f32>, c: HexCoord) {
        out.push(self.norm(c.0));
        out.push(self.norm(c.1));
    }

    fn encode(&self, step_index: usize) -> EnvState {
        let mut f = Vec::with_capacity(self.state_dim());
        for &a in &self.agents {
            self.push_coord(&mut f, a);
        }
        for c in self.high_fields() {
            self.push_coord(&mut f, c);
        }
        EnvState {
            features: f,
            step_index,
        }
    }

    fn field_reward(&self, cell: HexCoord) -> Option<f64> {
        let k = self.fields().iter().position(|&f| f == cell)?;
        Some(if self.high.contains(&k) {
            self.config.high_reward
        } else {
            self.config.base_reward
        })
    }

    /// Team payout for the current placement: every agent on a field earns
    /// that field's reward times the crowd bonus.
    pub fn payout(&self) -> f64 {
        let fields = self.fields();
        fields
            .iter()
            .map(|&f| {
                let k = self.agents.iter().filter(|&&a| a == f).count();
                if k == 0 {
                    return 0.0;
                }
                let each = self.field_reward(f).unwrap()
                    * self.config.group_bonus_factor.powi(k as i32 - 1);
                each * k as f64
            })
            .sum()
    }

    fn parked(&self, agent: usize) -> bool {
        self.fields().contains(&self.agents[agent])
    }
}

impl Environment for HoneycombEnv {
    fn name(&self) -> &'static str {
        "honeycomb"
    }

    fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    fn n_actions(&self) -> usize {
        HEX_MOVES.len()
    }

    fn void_action(&self) -> usize {
        6
    }

    fn state_dim(&self) -> usize {
        2 * self.config.n_agents + 2 * self.config.n_high_fields
    }

    fn obs_dim(&self, agent: usize) -> usize {
        let base = 2 * self.config.n_agents + 12;
        if self.is_informed(agent) {
            base + 2 * self.config.n_high_fields
        } else {
            base
        }
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps
    }

    fn shared_observations(&self) -> bool {
        self.config.n_informed == 0 || self.config.n_informed == self.config.n_agents
    }

    fn reset(&mut self, seed: u64) -> (EnvState, Vec<Observation>) {
        let mut rng = seeding::rng(seed);
        let mut high: Vec<usize> = index::sample(&mut rng, 6, self.config.n_high_fields)
            .into_iter()
            .collect();
        high.sort_unstable();
        self.high = high;
        self.agents = vec![(0, 0); self.config.n_agents];
        self.state = self.encode(0);
        self.done = false;
        (self.state.clone(), self.observe(&self.state))
    }

    fn step(&mut self, action: &JointAction) -> Result<StepResult> {
        if self.done {
            return Err(usage("step called on a finished honeycomb episode"));
        }
        if action.0.len() != self.n_agents() || action.0.iter().any(|&a| a >= self.n_actions()) {
            return Err(usage("malformed honeycomb joint action"));
        }
        for (i, &a) in action.as_slice().iter().enumerate() {
            if self.parked(i) {
                continue;
            }
            let (q, r) = self.agents[i];
            let next = (q + HEX_MOVES[a].0, r + HEX_MOVES[a].1);
            if self.inside(next) {
                self.agents[i] = next;
            }
        }
        let step_index = self.state.step_index + 1;
        let terminated = (0..self.n_agents()).all(|i| self.parked(i));
        let truncated = step_index >= self.config.max_steps;
        let reward = if terminated || truncated {
            self.payout()
        } else {
            0.0
        };
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
        let n = self.config.n_agents;
        let mut shared = state.features[..2 * n].to_vec();
        for f in self.fields() {
            self.push_coord(&mut shared, f);
        }
        let high = &state.features[2 * n..];
        (0..n)
            .map(|agent_id| {
                let mut features = shared.clone();
                if self.is_informed(agent_id) {
                    features.extend_from_slice(high);
                }
                Observation {
                    features,
                    agent_id,
                }
            })
            .collect()
    }

    fn unobserved_features(&self, state: &EnvState, _agent: usize) -> Vec<f32> {
        state.features[2 * self.config.n_agents..].to_vec()
    }

    fn unobserved_dim(&self, _agent: usize) -> usize {
        2 * self.config.n_high_fields
    }

    fn current_state(&self) -> &EnvState {
        &self.state
    }

    fn is_done(&self) -> bool {
        self.done
    }
}

impl HoneycombEnv {
    /// Agent positions decoded from a state vector.
    pub fn agents_in(&self, state: &EnvState) -> Vec<HexCoord> {
        (0..self.config.n_agents)
            .map(|i| (self.denorm(state.features[2 * i]), self.denorm(state.features[2 * i + 1])))
            .collect()
    }
}
