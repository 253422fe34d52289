use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use belief_marl::belief::BeliefSet;
use belief_marl::data::{collect_random, LabeledDataset};
use belief_marl::envs::EnvConfig;
use belief_marl::harness::{self, ExperimentConfig, MetricsLog};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "belief-marl", version, about = "Belief-conditioned decentralized multi-agent Q-learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Collect state-labelled random roll-outs.
    Collect {
        #[command(flatten)]
        common: Common,
        /// Environment name, used when no config is given.
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Pre-train belief models on a labelled dataset.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train one seed, or every configured seed in parallel.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Search the configured hyper-parameter grid and write the best config.
    GridSearch {
        #[command(flatten)]
        common: Common,
    },
    /// Compare finished runs with the random policy.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Plot learning curves from metrics files; runs are grouped by the
    /// algorithm prefix of their directory.
    PlotCurves {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100)]
        window: usize,
        #[arg(long, default_value = "curves")]
        name: String,
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
    /// Visualize Oracle belief states before and after the query.
    PlotBelief {
        #[command(flatten)]
        common: Common,
        /// Directory with belief checkpoints.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(common: &Common, config: &ExperimentConfig) -> PathBuf {
    common.out.clone().unwrap_or_else(|| config.output_dir.clone())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn algorithm_of(path: &Path) -> String {
    let dir = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match dir.rfind("_seed") {
        Some(k) => dir[..k].to_string(),
        None => dir,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Collect { common, env, episodes } => {
            let mut config = load_config(&common)?;
            if let Some(name) = env {
                if common.config.is_some() {
                    bail!("give either --env or --config, not both");
                }
                config.env = EnvConfig::by_name(&name).with_context(|| format!("unknown environment {name:?}"))?;
            }
            let n = episodes.unwrap_or(config.pretrain.episodes);
            if n == 0 {
                bail!("--episodes must be at least 1");
            }
            let path = common.out.clone().context("collect needs --out FILE")?;
            let data = collect_random(&config.env, n, common.seed.unwrap_or(0))?;
            data.save(&path)?;
            println!("wrote {} episodes ({} transitions) to {}", n, data.n_transitions(), path.display());
        }
        Command::Pretrain { common, dataset } => {
            let config = load_config(&common)?;
            let path = dataset.or(config.dataset.clone()).context("pretrain needs --dataset or a dataset in the config")?;
            let data = LabeledDataset::load_for(&path, &config.env)?;
            let seed = common.seed.unwrap_or(config.seeds[0]);
            let (set, reports) = harness::pretrain_beliefs(&data, &config, seed)?;
            let dir = out_dir(&common, &config);
            fs::create_dir_all(&dir)?;
            set.save(&dir, config.env.name())?;
            write_json(&dir.join("pretrain_report.json"), &reports)?;
            for (k, r) in reports.iter().enumerate() {
                println!(
                    "model {k}: best epoch {} validation loss {:.4}",
                    r.best_epoch,
                    r.validation_loss[r.best_epoch]
                );
            }
        }
        Command::Train { common } => {
            let config = load_config(&common)?;
            let outputs = match common.seed {
                Some(s) => vec![harness::run_experiment(&config, s)?],
                None => harness::run_seeds(&config)?,
            };
            for o in outputs {
                let last = o.metrics.final_mean(config.final_window).unwrap_or(f64::NAN);
                println!("{}: {} episodes, final mean return {last:.4}", o.dir.display(), o.metrics.rows.len());
            }
        }
        Command::GridSearch { common } => {
            let config = load_config(&common)?;
            let result = harness::grid_search(&config)?;
            let best = &result.ranking[0];
            println!("best point {} with mean final return {:.4}", best.index, best.mean_final_return);
            let path = config.output_dir.join("grid").join("best.toml");
            fs::write(&path, result.best.to_toml()?)?;
            println!("wrote {}", path.display());
        }
        Command::Eval { common } => {
            let config = load_config(&common)?;
            let report = harness::evaluate(&config)?;
            let path = config.output_dir.join(format!("eval_{}.json", config.algorithm.name()));
            write_json(&path, &report)?;
            println!(
                "{}: mean final return {:.4}, random policy {:.4} (se {:.4})",
                report.algorithm, report.mean_final_return, report.random_policy.mean, report.random_policy.standard_error
            );
        }
        Command::PlotCurves { common, window, name, metrics } => {
            if window == 0 {
                bail!("--window must be at least 1");
            }
            let mut groups: BTreeMap<String, Vec<MetricsLog>> = BTreeMap::new();
            for p in &metrics {
                let log = MetricsLog::load(p).with_context(|| format!("reading {}", p.display()))?;
                groups.entry(algorithm_of(p)).or_default().push(log);
            }
            let groups: Vec<(String, Vec<MetricsLog>)> = groups.into_iter().collect();
            let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
            harness::plot_curves(&groups, window, &dir, &name)?;
            println!("wrote {}", dir.join(format!("{name}.svg")).display());
        }
        Command::PlotBelief { common, checkpoint, episodes } => {
            let config = load_config(&common)?;
            let n_agents = config.env.build()?.n_agents();
            let set = BeliefSet::load(&checkpoint, n_agents)
                .with_context(|| format!("loading belief checkpoints from {}", checkpoint.display()))?;
            let dir = out_dir(&common, &config);
            let report = harness::plot_belief(
                &set.for_agent(0),
                &config.env,
                episodes,
                config.belief_samples,
                common.seed.unwrap_or(0),
                Some(&dir),
            )?;
            println!(
                "accuracy {:.3}, mean std before {:.4} after {:.4}",
                report.accuracy, report.mean_std_pre, report.mean_std_post
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
