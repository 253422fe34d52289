use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{HystereticRates, RecurrentConfig};
use crate::belief::PretrainConfig;
use crate::envs::{EnvConfig, OracleConfig};
use crate::error::{config, Result};
use crate::i2q::I2qConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    BeliefI2q,
    /// Belief-I2Q with the belief input removed.
    I2q,
    RecI2q,
    RecHystIql,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::BeliefI2q, Algorithm::I2q, Algorithm::RecI2q, Algorithm::RecHystIql];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::BeliefI2q => "belief_i2q",
            Algorithm::I2q => "i2q",
            Algorithm::RecI2q => "rec_i2q",
            Algorithm::RecHystIql => "rec_hyst_iql",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    /// Fraction of the episode budget over which epsilon decays linearly.
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 0.6,
            end: 0.05,
            decay_fraction: 0.5,
        }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, episode: usize, budget: usize) -> f64 {
        let horizon = self.decay_fraction * budget as f64;
        if horizon <= 0.0 {
            return self.end;
        }
        let frac = (episode as f64 / horizon).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub q: f64,
    pub qss: f64,
    pub f: f64,
    pub belief: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            q: 0.001,
            qss: 0.001,
            f: 0.001,
            belief: 0.001,
        }
    }
}

/// Stage-one settings. `episodes` is only used when the harness collects the
/// dataset itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub episodes: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub history_hidden: usize,
    pub mlp_hidden: Vec<usize>,
    /// One model pooled over all agents; defaults to whether the environment
    /// gives every agent the same kind of observation.
    pub shared: Option<bool>,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let p = PretrainConfig::default();
        Self {
            episodes: 2000,
            batch_size: p.batch_size,
            max_epochs: p.max_epochs,
            patience: p.patience,
            validation_fraction: p.validation_fraction,
            history_hidden: p.history_hidden,
            mlp_hidden: p.mlp_hidden,
            shared: None,
        }
    }
}

/// Grid-search axes. Every combination is a grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridAxes {
    pub lr_q: Vec<f64>,
    pub lr_qss: Vec<f64>,
    pub lr_belief: Vec<f64>,
    pub lr_f: Vec<f64>,
    pub lambda: Vec<f64>,
    pub latent_dim: Vec<usize>,
}

impl Default for GridAxes {
    fn default() -> Self {
        let lr = vec![0.001, 0.0003];
        Self {
            lr_q: lr.clone(),
            lr_qss: lr.clone(),
            lr_belief: lr.clone(),
            lr_f: lr,
            lambda: vec![0.1, 0.3],
            latent_dim: vec![8, 16, 32],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub lambda: f64,
    pub latent_dim: usize,
    /// Latent samples averaged into one belief.
    pub belief_samples: usize,
    pub tau: f64,
    pub buffer_capacity: usize,
    pub batch_episodes: usize,
    /// Optional cap on transitions per I2Q update.
    pub max_batch_transitions: Option<usize>,
    /// Episodes in the buffer before the first update.
    pub warmup_episodes: usize,
    /// Training episodes; unset means 30,000 for Gathering and Escape and
    /// 20,000 otherwise.
    pub episodes: Option<usize>,
    pub seeds: Vec<u64>,
    pub hidden: Vec<usize>,
    pub gru_hidden: usize,
    pub hysteretic_alpha: f64,
    pub hysteretic_beta: f64,
    /// Episodes at the end of a run whose mean return ranks grid points.
    pub final_window: usize,
    pub dataset: Option<PathBuf>,
    /// Directory holding pre-trained belief checkpoints.
    pub belief_checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub env: EnvConfig,
    pub epsilon: EpsilonSchedule,
    pub learning_rates: LearningRates,
    pub pretrain: PretrainSection,
    pub grid: GridAxes,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::BeliefI2q,
            gamma: 0.99,
            lambda: 0.1,
            latent_dim: 16,
            belief_samples: 10,
            tau: 0.005,
            buffer_capacity: crate::data::DEFAULT_CAPACITY,
            batch_episodes: 32,
            max_batch_transitions: None,
            warmup_episodes: 32,
            episodes: None,
            seeds: vec![0, 1, 2],
            hidden: vec![128, 128, 128],
            gru_hidden: 64,
            hysteretic_alpha: 1.0,
            hysteretic_beta: 0.1,
            final_window: 1000,
            dataset: None,
            belief_checkpoint: None,
            output_dir: PathBuf::from("runs"),
            env: EnvConfig::Oracle(OracleConfig::default()),
            epsilon: EpsilonSchedule::default(),
            learning_rates: LearningRates::default(),
            pretrain: PretrainSection::default(),
            grid: GridAxes::default(),
        }
    }
}

fn check(ok: bool, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(config(msg))
    }
}

impl ExperimentConfig {
    pub fn episode_budget(&self) -> usize {
        self.episodes.unwrap_or(match self.env {
            EnvConfig::Gathering(_) | EnvConfig::Escape(_) => 30_000,
            _ => 20_000,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let lr = &self.learning_rates;
        let eps = &self.epsilon;
        check((0.0..1.0).contains(&self.gamma), "gamma must lie in [0, 1)")?;
        check(
            (0.0..=1.0).contains(&eps.start) && (0.0..=1.0).contains(&eps.end) && eps.end <= eps.start,
            "epsilon needs 0 <= end <= start <= 1",
        )?;
        check((0.0..=1.0).contains(&eps.decay_fraction), "epsilon decay_fraction must lie in [0, 1]")?;
        check(
            [lr.q, lr.qss, lr.f, lr.belief].iter().all(|&v| v > 0.0 && v.is_finite()),
            "learning rates must be positive",
        )?;
        check(self.lambda >= 0.0 && self.lambda.is_finite(), "lambda must be non-negative")?;
        check(self.latent_dim >= 1, "latent_dim must be positive")?;
        check(self.belief_samples >= 1, "belief_samples must be at least 1")?;
        check(self.tau > 0.0 && self.tau <= 1.0, "tau must lie in (0, 1]")?;
        check(self.buffer_capacity >= 1, "buffer_capacity must be positive")?;
        check(self.batch_episodes >= 1, "batch_episodes must be positive")?;
        check(self.max_batch_transitions != Some(0), "max_batch_transitions must be positive")?;
        check(self.episodes != Some(0), "episodes must be positive")?;
        check(!self.seeds.is_empty(), "seeds must not be empty")?;
        check(!self.hidden.is_empty() && self.hidden.iter().all(|&h| h > 0), "hidden sizes must be positive")?;
        check(self.gru_hidden >= 1, "gru_hidden must be positive")?;
        check(self.final_window >= 1, "final_window must be positive")?;
        HystereticRates::new(self.hysteretic_alpha, self.hysteretic_beta)?;
        let p = &self.pretrain;
        check(p.batch_size >= 1 && p.history_hidden >= 1, "pretrain sizes must be positive")?;
        check((0.0..1.0).contains(&p.validation_fraction), "validation_fraction must lie in [0, 1)")?;
        self.env.build()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn i2q_config(&self) -> I2qConfig {
        I2qConfig {
            hidden: self.hidden.clone(),
            lr_qss: self.learning_rates.qss,
            lr_f: self.learning_rates.f,
            lr_q: self.learning_rates.q,
            gamma: self.gamma,
            lambda: self.lambda,
            tau: self.tau,
            belief_samples: self.belief_samples,
            batch_episodes: self.batch_episodes,
            max_batch_transitions: self.max_batch_transitions,
            warmup_episodes: self.warmup_episodes,
        }
    }

    pub fn recurrent_config(&self) -> RecurrentConfig {
        RecurrentConfig {
            gru_hidden: self.gru_hidden,
            hidden: self.hidden.clone(),
            lr_qss: self.learning_rates.qss,
            lr_f: self.learning_rates.f,
            lr_q: self.learning_rates.q,
            gamma: self.gamma,
            lambda: self.lambda,
            tau: self.tau,
            batch_episodes: self.batch_episodes,
            warmup_episodes: self.warmup_episodes,
            rates: HystereticRates {
                alpha: self.hysteretic_alpha,
                beta: self.hysteretic_beta,
            },
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        let p = &self.pretrain;
        PretrainConfig {
            learning_rate: self.learning_rates.belief,
            latent_dim: self.latent_dim,
            batch_size: p.batch_size,
            max_epochs: p.max_epochs,
            patience: p.patience,
            validation_fraction: p.validation_fraction,
            history_hidden: p.history_hidden,
            mlp_hidden: p.mlp_hidden.clone(),
        }
    }
}
