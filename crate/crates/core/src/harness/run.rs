use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Algorithm, ExperimentConfig};
use crate::baselines::{RecHystIqlAgent, RecI2qAgent};
use crate::belief::{pretrain, BeliefSet, BeliefTarget, PretrainReport, SequenceSet};
use crate::data::{LabeledDataset, LocalTrajectory, ReplayBuffer, TeamEpisode};
use crate::dec_pomdp::{JointAction, ObservedEnv};
use crate::error::{config as config_error, usage, Error, Result};
use crate::i2q::BeliefI2qAgent;
use crate::learner::{AgentLearner, LossSummary};
use crate::seeding::{self, tag};

pub const METRICS_HEADER: &str = "seed,episode,return,epsilon,loss_qss,loss_f,loss_q";

/// One training episode: undiscounted team return and the agents' mean
/// losses (`None` when no agent produced that loss).
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub seed: u64,
    pub episode: usize,
    pub ret: f64,
    pub epsilon: f64,
    pub loss_qss: Option<f64>,
    pub loss_f: Option<f64>,
    pub loss_q: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.seed,
            self.episode,
            self.ret,
            self.epsilon,
            opt(self.loss_qss),
            opt(self.loss_f),
            opt(self.loss_q)
        )
    }

    fn parse(line: &str) -> std::result::Result<Self, String> {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(format!("expected 7 columns, got {}", cols.len()));
        }
        let float = |s: &str| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
        let maybe = |s: &str| if s.is_empty() { Ok(None) } else { float(s).map(Some) };
        Ok(Self {
            seed: cols[0].parse().map_err(|e| format!("{e}"))?,
            episode: cols[1].parse().map_err(|e| format!("{e}"))?,
            ret: float(cols[2])?,
            epsilon: float(cols[3])?,
            loss_qss: maybe(cols[4])?,
            loss_f: maybe(cols[5])?,
            loss_q: maybe(cols[6])?,
        })
    }
}

/// Per-episode metrics of one (config, seed) run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn returns(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.ret).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.to_line());
            s.push('\n');
        }
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::Corrupt {
            path: path.to_path_buf(),
            reason,
        };
        let mut lines = BufReader::new(File::open(path)?).lines();
        match lines.next().transpose()? {
            Some(h) if h == METRICS_HEADER => {}
            other => return Err(corrupt(format!("bad header {other:?}"))),
        }
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line?;
            rows.push(MetricsRow::parse(&line).map_err(|e| corrupt(format!("line {}: {e}", k + 2)))?);
        }
        Ok(Self { rows })
    }

    /// Mean return over the last `window` episodes.
    pub fn final_mean(&self, window: usize) -> Option<f64> {
        let n = self.rows.len();
        if n == 0 || window == 0 {
            return None;
        }
        let tail = &self.rows[n - window.min(n)..];
        Some(tail.iter().map(|r| r.ret).sum::<f64>() / tail.len() as f64)
    }
}

/// Mean and spread of episode returns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReturnStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub standard_error: f64,
}

impl ReturnStats {
    pub fn from_returns(returns: &[f64]) -> Result<Self> {
        if returns.is_empty() {
            return Err(usage("return statistics need at least one episode"));
        }
        let n = returns.len();
        let mean = returns.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Ok(Self {
            n,
            mean,
            std: var.sqrt(),
            standard_error: (var / n as f64).sqrt(),
        })
    }

    pub fn from_dataset(dataset: &LabeledDataset) -> Result<Self> {
        let returns: Vec<f64> = dataset.episodes.iter().map(|e| e.undiscounted_return()).collect();
        Self::from_returns(&returns)
    }
}

/// Stage one: fits one pooled belief model or one per agent.
pub fn pretrain_beliefs(dataset: &LabeledDataset, config: &ExperimentConfig, seed: u64) -> Result<(BeliefSet, Vec<PretrainReport>)> {
    let env = dataset.env.build()?;
    let shared = config.pretrain.shared.unwrap_or(env.shared_observations());
    let pconfig = config.pretrain_config();
    let pseed = seeding::derive(seed, &[tag("pretrain")]);
    if shared {
        let set = SequenceSet::from_dataset(dataset, BeliefTarget::Shared)?;
        let (model, report) = pretrain(&set, &pconfig, pseed)?;
        return Ok((BeliefSet::Shared(model.into()), vec![report]));
    }
    let fitted = (0..env.n_agents())
        .into_par_iter()
        .map(|i| {
            let set = SequenceSet::from_dataset(dataset, BeliefTarget::Agent(i))?;
            pretrain(&set, &pconfig, seeding::derive(pseed, &[i as u64]))
        })
        .collect::<Result<Vec<_>>>()?;
    let (models, reports): (Vec<_>, Vec<_>) = fitted.into_iter().map(|(m, r)| (m.into(), r)).unzip();
    Ok((BeliefSet::PerAgent(models), reports))
}

fn stage_one(config: &ExperimentConfig, seed: u64, n_agents: usize) -> Result<BeliefSet> {
    if let Some(dir) = &config.belief_checkpoint {
        return BeliefSet::load(dir, n_agents);
    }
    let Some(path) = &config.dataset else {
        return Err(config_error("belief_i2q needs a dataset or a belief checkpoint"));
    };
    let dataset = LabeledDataset::load_for(path, &config.env)?;
    Ok(pretrain_beliefs(&dataset, config, seed)?.0)
}

fn build_learners(config: &ExperimentConfig, env: &ObservedEnv<dyn crate::dec_pomdp::Environment>, beliefs: Option<&BeliefSet>, seed: u64) -> Result<Vec<Box<dyn AgentLearner>>> {
    (0..env.n_agents())
        .map(|i| {
            let (obs, act) = (env.obs_dim(i), env.n_actions());
            Ok(match config.algorithm {
                Algorithm::BeliefI2q => Box::new(BeliefI2qAgent::new(
                    i,
                    obs,
                    act,
                    Some(beliefs.expect("stage one ran").for_agent(i)),
                    config.i2q_config(),
                    seed,
                )?) as Box<dyn AgentLearner>,
                Algorithm::I2q => Box::new(BeliefI2qAgent::new(i, obs, act, None, config.i2q_config(), seed)?),
                Algorithm::RecI2q => Box::new(RecI2qAgent::new(i, obs, act, config.recurrent_config(), seed)),
                Algorithm::RecHystIql => Box::new(RecHystIqlAgent::new(i, obs, act, config.recurrent_config(), seed)),
            })
        })
        .collect()
}

fn mean_loss(losses: &[LossSummary], pick: impl Fn(&LossSummary) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = losses.iter().filter_map(pick).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Where a run writes its metrics, manifest and checkpoints.
pub fn run_dir(config: &ExperimentConfig, seed: u64) -> PathBuf {
    config.output_dir.join(format!("{}_seed{seed}", config.algorithm.name()))
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub metrics: MetricsLog,
    pub stopped_early: bool,
}

/// Two-stage training run. Deterministic in `(config, seed)`.
pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    run_experiment_with(config, seed, |_| false)
}

/// As [`run_experiment`], ending the run once `stop` returns true for a
/// finished episode.
pub fn run_experiment_with(config: &ExperimentConfig, seed: u64, mut stop: impl FnMut(&MetricsRow) -> bool) -> Result<RunOutput> {
    config.validate()?;
    let mut env = ObservedEnv::new(config.env.build()?);
    let n_agents = env.n_agents();
    let dir = run_dir(config, seed);
    fs::create_dir_all(&dir)?;

    let beliefs = match config.algorithm {
        Algorithm::BeliefI2q => {
            let b = stage_one(config, seed, n_agents)?;
            b.save(&dir, config.env.name())?;
            Some(b)
        }
        _ => None,
    };
    let mut learners = build_learners(config, &env, beliefs.as_ref(), seed)?;
    let mut explore: Vec<seeding::Rng> = (0..n_agents)
        .map(|i| seeding::child_rng(seed, &[tag("explore"), i as u64]))
        .collect();
    let mut buffer = ReplayBuffer::new(config.buffer_capacity)?;

    let metrics_path = dir.join("metrics.csv");
    let mut out = BufWriter::new(File::create(&metrics_path)?);
    writeln!(out, "{METRICS_HEADER}")?;
    let mut log = MetricsLog::default();
    let mut stopped_early = false;
    let budget = config.episode_budget();
    for episode in 0..budget {
        let epsilon = config.epsilon.at(episode, budget);
        let obs = env.reset(seeding::derive(seed, &[tag("train-episode"), episode as u64]));
        let mut trajs: Vec<LocalTrajectory> = obs
            .iter()
            .map(|o| LocalTrajectory {
                observations: vec![o.features.clone()],
                actions: Vec::new(),
                rewards: Vec::new(),
                terminated: false,
                belief: None,
            })
            .collect();
        for (l, o) in learners.iter_mut().zip(&obs) {
            l.begin_episode(&o.features)?;
        }
        let mut ret = 0.0;
        loop {
            let actions = learners
                .iter_mut()
                .zip(&mut explore)
                .map(|(l, rng)| l.act(epsilon, rng))
                .collect::<Result<Vec<_>>>()?;
            let step = env.step(&JointAction(actions.clone()))?;
            ret += step.reward;
            for (i, o) in step.observations.iter().enumerate() {
                trajs[i].actions.push(actions[i]);
                trajs[i].rewards.push(step.reward);
                trajs[i].observations.push(o.features.clone());
                learners[i].observe(actions[i], &o.features)?;
            }
            if step.terminated || step.truncated {
                for t in &mut trajs {
                    t.terminated = step.terminated;
                }
                break;
            }
        }
        for (l, t) in learners.iter_mut().zip(&mut trajs) {
            t.belief = l.end_episode();
        }
        buffer.push(TeamEpisode::new(trajs));
        let buffer = &buffer;
        let losses = learners
            .par_iter_mut()
            .enumerate()
            .map(|(i, l)| l.update(buffer.view(i)))
            .collect::<Result<Vec<_>>>()?;
        let row = MetricsRow {
            seed,
            episode,
            ret,
            epsilon,
            loss_qss: mean_loss(&losses, |l| l.qss),
            loss_f: mean_loss(&losses, |l| l.f),
            loss_q: mean_loss(&losses, |l| l.q),
        };
        writeln!(out, "{}", row.to_line())?;
        let done = stop(&row);
        log.rows.push(row);
        if done {
            stopped_early = episode + 1 < budget;
            break;
        }
    }
    out.flush()?;
    drop(out);

    for (i, l) in learners.iter().enumerate() {
        l.checkpoint().save(&dir.join(format!("agent{i}.ckpt")))?;
    }
    write_manifest(config, seed, &dir, &log, stopped_early)?;
    Ok(RunOutput {
        dir,
        metrics: log,
        stopped_early,
    })
}

fn write_manifest(config: &ExperimentConfig, seed: u64, dir: &Path, log: &MetricsLog, stopped_early: bool) -> Result<()> {
    let metrics_digest = hex::encode(Sha256::digest(fs::read(dir.join("metrics.csv"))?));
    let manifest = serde_json::json!({
        "algorithm": config.algorithm.name(),
        "seed": seed,
        "config_digest": config.digest(),
        "config": config,
        "episodes_run": log.rows.len(),
        "stopped_early": stopped_early,
        "metrics": "metrics.csv",
        "metrics_sha256": metrics_digest,
    });
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Runs every configured seed in parallel.
pub fn run_seeds(config: &ExperimentConfig) -> Result<Vec<RunOutput>> {
    config.seeds.par_iter().map(|&s| run_experiment(config, s)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub algorithm: String,
    /// `(seed, mean return over the final window)`.
    pub final_returns: Vec<(u64, f64)>,
    pub mean_final_return: f64,
    pub random_policy: ReturnStats,
    /// `(mean - random mean) / random standard error` per seed.
    pub margin_in_standard_errors: Vec<(u64, f64)>,
}

/// Summarizes finished runs of every configured seed against the random
/// policy, estimated from the configured dataset or fresh random roll-outs.
pub fn evaluate(config: &ExperimentConfig) -> Result<EvalReport> {
    let random = match &config.dataset {
        Some(path) => ReturnStats::from_dataset(&LabeledDataset::load_for(path, &config.env)?)?,
        None => {
            let seed = seeding::derive(config.seeds[0], &[tag("random-baseline")]);
            let data = crate::data::collect_random(&config.env, config.pretrain.episodes.max(1), seed)?;
            ReturnStats::from_dataset(&data)?
        }
    };
    let mut final_returns = Vec::new();
    for &seed in &config.seeds {
        let log = MetricsLog::load(&run_dir(config, seed).join("metrics.csv"))?;
        let m = log
            .final_mean(config.final_window)
            .ok_or_else(|| usage(format!("run for seed {seed} has no episodes")))?;
        final_returns.push((seed, m));
    }
    let mean_final_return = final_returns.iter().map(|x| x.1).sum::<f64>() / final_returns.len() as f64;
    let se = random.standard_error.max(f64::MIN_POSITIVE);
    Ok(EvalReport {
        algorithm: config.algorithm.name().into(),
        margin_in_standard_errors: final_returns.iter().map(|&(s, m)| (s, (m - random.mean) / se)).collect(),
        final_returns,
        mean_final_return,
        random_policy: random,
    })
}
