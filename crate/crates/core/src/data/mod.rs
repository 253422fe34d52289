//! State-labelled datasets for belief pre-training and the replay buffer for
//! the RL stage.
//!
//! Dataset file: one line of JSON header (format tag, schema version,
//! environment config and its digest, dimensions, episode count), then one
//! length-prefixed little-endian record per episode.

mod replay;

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use replay::{AgentView, DEFAULT_CAPACITY, BeliefCache, LocalTrajectory, LocalTransition, ReplayBuffer, TeamEpisode};

use crate::dec_pomdp::{EnvState, JointAction};
use crate::envs::EnvConfig;
use crate::error::{usage, Error, Result};
use crate::seeding::{self, tag};

pub const FORMAT: &str = "belief-marl-dataset";
pub const SCHEMA_VERSION: u32 = 1;

/// One roll-out with the full state recorded at every step.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledEpisode {
    pub seed: u64,
    /// `T + 1` states, the last one after the final action.
    pub states: Vec<EnvState>,
    /// `observations[t][i]`, aligned with `states`.
    pub observations: Vec<Vec<Vec<f32>>>,
    /// `actions[t][i]`, taken in `states[t]`.
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
    pub terminated: bool,
    pub truncated: bool,
}

impl LabeledEpisode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn undiscounted_return(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub env: EnvConfig,
    pub config_digest: String,
    pub episodes: Vec<LabeledEpisode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    schema_version: u32,
    env_name: String,
    env: EnvConfig,
    config_digest: String,
    n_agents: usize,
    state_dim: usize,
    obs_dims: Vec<usize>,
    n_episodes: usize,
}

/// Rolls out `n_episodes` episodes with uniformly random joint actions.
pub fn collect_random(env_config: &EnvConfig, n_episodes: usize, seed: u64) -> Result<LabeledDataset> {
    let env = env_config.build()?;
    let n_actions = env.n_actions();
    collect_with(env_config, n_episodes, seed, |_, _, rng| {
        (0..env.n_agents()).map(|_| rng.random_range(0..n_actions)).collect()
    })
}

/// Rolls out episodes with `policy(episode, state, rng) -> joint action`.
/// Episode `k` resets the environment with a seed derived from `(seed, k)`.
pub fn collect_with<F>(env_config: &EnvConfig, n_episodes: usize, seed: u64, mut policy: F) -> Result<LabeledDataset>
where
    F: FnMut(usize, &EnvState, &mut seeding::Rng) -> Vec<usize>,
{
    let mut env = env_config.build()?;
    let mut episodes = Vec::with_capacity(n_episodes);
    for k in 0..n_episodes {
        let ep_seed = seeding::derive(seed, &[tag("collect-episode"), k as u64]);
        let mut rng = seeding::child_rng(ep_seed, &[tag("collect-policy")]);
        let (state, obs) = env.reset(ep_seed);
        let mut ep = LabeledEpisode {
            seed: ep_seed,
            states: vec![state],
            observations: vec![obs.into_iter().map(|o| o.features).collect()],
            actions: Vec::new(),
            rewards: Vec::new(),
            terminated: false,
            truncated: false,
        };
        loop {
            let action = policy(k, ep.states.last().expect("non-empty"), &mut rng);
            let step = env.step(&JointAction::new(action.clone()))?;
            ep.actions.push(action);
            ep.rewards.push(step.reward);
            ep.states.push(step.next_state);
            ep.observations
                .push(step.next_observations.into_iter().map(|o| o.features).collect());
            if step.terminated || step.truncated {
                ep.terminated = step.terminated;
                ep.truncated = step.truncated;
                break;
            }
        }
        episodes.push(ep);
    }
    Ok(LabeledDataset {
        env: env_config.clone(),
        config_digest: env_config.digest(),
        episodes,
    })
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Option<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4)?)?;
        Some(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

impl LabeledDataset {
    pub fn n_transitions(&self) -> usize {
        self.episodes.iter().map(LabeledEpisode::len).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let env = self.env.build()?;
        let n_agents = env.n_agents();
        let header = Header {
            format: FORMAT.to_string(),
            schema_version: SCHEMA_VERSION,
            env_name: self.env.name().to_string(),
            env: self.env.clone(),
            config_digest: self.config_digest.clone(),
            n_agents,
            state_dim: env.state_dim(),
            obs_dims: (0..n_agents).map(|i| env.obs_dim(i)).collect(),
            n_episodes: self.episodes.len(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for ep in &self.episodes {
            let mut rec = Vec::new();
            rec.extend_from_slice(&ep.seed.to_le_bytes());
            rec.extend_from_slice(&(ep.len() as u32).to_le_bytes());
            rec.push(ep.terminated as u8);
            rec.push(ep.truncated as u8);
            for (t, state) in ep.states.iter().enumerate() {
                if state.features.len() != header.state_dim || state.step_index != t {
                    return Err(usage("episode state does not match the environment"));
                }
                put_f32s(&mut rec, &state.features);
                for (i, o) in ep.observations[t].iter().enumerate() {
                    if o.len() != header.obs_dims[i] {
                        return Err(usage("episode observation does not match the environment"));
                    }
                    put_f32s(&mut rec, o);
                }
            }
            for a in &ep.actions {
                for &ai in a {
                    rec.extend_from_slice(&(ai as u32).to_le_bytes());
                }
            }
            for r in &ep.rewards {
                rec.extend_from_slice(&r.to_le_bytes());
            }
            out.extend_from_slice(&(rec.len() as u64).to_le_bytes());
            out.extend_from_slice(&rec);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let bytes = self.to_bytes()?;
        fs::File::create(path)?.write_all(&bytes)?;
        Ok(())
    }

    /// Loads a dataset file, validating its format, version and digest.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Corrupt { reason, .. } => Error::Corrupt {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }

    /// Like [`LabeledDataset::load`], also requiring the file to have been
    /// collected under `expected`.
    pub fn load_for(path: &Path, expected: &EnvConfig) -> Result<Self> {
        let ds = Self::load(path)?;
        let want = expected.digest();
        if ds.config_digest != want {
            return Err(Error::Digest {
                found: ds.config_digest,
                expected: want,
            });
        }
        Ok(ds)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |reason: &str| Error::Corrupt {
            path: Default::default(),
            reason: reason.to_string(),
        };
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt("missing header"))?;
        let value: serde_json::Value =
            serde_json::from_slice(&bytes[..newline]).map_err(|_| corrupt("unreadable header"))?;
        if value.get("format").and_then(|f| f.as_str()) != Some(FORMAT) {
            return Err(corrupt("not a dataset file"));
        }
        let version = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != SCHEMA_VERSION {
            return Err(Error::Version {
                found: version,
                expected: SCHEMA_VERSION,
            });
        }
        let header: Header = serde_json::from_value(value).map_err(|_| corrupt("malformed header"))?;
        if header.env.digest() != header.config_digest {
            return Err(Error::Digest {
                found: header.config_digest,
                expected: header.env.digest(),
            });
        }
        let n = header.n_agents;
        let mut cur = Cursor {
            bytes: &bytes[newline + 1..],
            pos: 0,
        };
        let mut episodes = Vec::with_capacity(header.n_episodes.min(1 << 20));
        for _ in 0..header.n_episodes {
            let ep = (|| {
                let len = cur.u64()? as usize;
                let start = cur.pos;
                let seed = cur.u64()?;
                let steps = cur.u32()? as usize;
                let terminated = cur.u8()? != 0;
                let truncated = cur.u8()? != 0;
                let mut states = Vec::with_capacity(steps + 1);
                let mut observations = Vec::with_capacity(steps + 1);
                for t in 0..=steps {
                    states.push(EnvState {
                        features: cur.f32s(header.state_dim)?,
                        step_index: t,
                    });
                    let mut obs = Vec::with_capacity(n);
                    for &d in &header.obs_dims {
                        obs.push(cur.f32s(d)?);
                    }
                    observations.push(obs);
                }
                let mut actions = Vec::with_capacity(steps);
                for _ in 0..steps {
                    actions.push((0..n).map(|_| cur.u32().map(|a| a as usize)).collect::<Option<Vec<_>>>()?);
                }
                let rewards = (0..steps).map(|_| cur.f64()).collect::<Option<Vec<_>>>()?;
                (cur.pos - start == len).then_some(LabeledEpisode {
                    seed,
                    states,
                    observations,
                    actions,
                    rewards,
                    terminated,
                    truncated,
                })
            })()
            .ok_or_else(|| corrupt("truncated or malformed episode record"))?;
            episodes.push(ep);
        }
        if cur.pos != cur.bytes.len() {
            return Err(corrupt("trailing bytes after the last episode"));
        }
        Ok(Self {
            env: header.env,
            config_digest: header.config_digest,
            episodes,
        })
    }
}
