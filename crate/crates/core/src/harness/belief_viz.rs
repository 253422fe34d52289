use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::svg::{Canvas, PALETTE};
use crate::belief::{BeliefModel, History};
use crate::data::{collect_with, LabeledDataset};
use crate::envs::{EnvConfig, OracleEnv};
use crate::error::{usage, Error, Result};
use crate::seeding::{self, tag};

/// Agent whose belief states are inspected; it walks to the oracle while the
/// others wait.
const QUERY_AGENT: usize = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefCluster {
    /// True treasure index, `None` for the ungrouped pre-query cluster.
    pub treasure: Option<usize>,
    pub count: usize,
    pub mean: Vec<f64>,
    /// Average of the per-sample model standard deviations.
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefReport {
    pub n_episodes: usize,
    /// Fraction of episodes whose post-query belief mean lies nearest the
    /// true treasure.
    pub accuracy: f64,
    pub mean_std_pre: f64,
    pub mean_std_post: f64,
    pub pre_query: BeliefCluster,
    pub post_query: Vec<BeliefCluster>,
}

struct Sample {
    mean: Vec<f64>,
    std: Vec<f64>,
}

fn cluster(treasure: Option<usize>, samples: &[&Sample]) -> BeliefCluster {
    let d = samples.first().map_or(0, |s| s.mean.len());
    let n = samples.len().max(1) as f64;
    let avg = |f: &dyn Fn(&Sample) -> &[f64]| (0..d).map(|c| samples.iter().map(|s| f(s)[c]).sum::<f64>() / n).collect();
    BeliefCluster {
        treasure,
        count: samples.len(),
        mean: avg(&|s| &s.mean),
        std: avg(&|s| &s.std),
    }
}

fn overall_std(samples: &[Sample]) -> f64 {
    let total: f64 = samples.iter().map(|s| s.std.iter().sum::<f64>() / s.std.len() as f64).sum();
    total / samples.len().max(1) as f64
}

/// Scripted Oracle episodes: the query agent heads straight for the oracle,
/// everyone else takes the void action.
pub fn scripted_oracle_episodes(env_config: &EnvConfig, n_episodes: usize, seed: u64) -> Result<LabeledDataset> {
    let EnvConfig::Oracle(c) = env_config else {
        return Err(Error::Unsupported(format!(
            "belief visualization needs the oracle environment, not {}",
            env_config.name()
        )));
    };
    let helper = OracleEnv::new(c.clone())?;
    let oracle = helper.oracle_cell();
    collect_with(env_config, n_episodes, seed, |_, state, _| {
        let cells = helper.agent_cells(state);
        (0..cells.len())
            .map(|i| {
                if i == QUERY_AGENT {
                    helper.action_towards(cells[i], oracle)
                } else {
                    crate::dec_pomdp::Environment::void_action(&helper)
                }
            })
            .collect()
    })
}

/// Belief states one step before and one step after the oracle query, over
/// scripted episodes. Writes `belief_pre.svg`, `belief_post.svg` and
/// `belief_report.json` into `out_dir` when given.
pub fn plot_belief(
    model: &BeliefModel,
    env_config: &EnvConfig,
    n_episodes: usize,
    belief_samples: usize,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<BeliefReport> {
    if n_episodes == 0 {
        return Err(usage("belief visualization needs at least one episode"));
    }
    let data = scripted_oracle_episodes(env_config, n_episodes, seed)?;
    let EnvConfig::Oracle(c) = env_config else { unreachable!() };
    let helper = OracleEnv::new(c.clone())?;
    let treasures = helper.treasure_coords();
    let n_agents = c.n_agents;
    let revealed = |o: &[f32]| o[2 * n_agents] != crate::envs::ORACLE_UNKNOWN;

    let mut pre = Vec::new();
    let mut post = Vec::new();
    let mut truth = Vec::new();
    for (k, ep) in data.episodes.iter().enumerate() {
        let obs: Vec<Vec<f32>> = ep.observations.iter().map(|o| o[QUERY_AGENT].clone()).collect();
        let acts: Vec<usize> = ep.actions.iter().map(|a| a[QUERY_AGENT]).collect();
        let Some(q) = obs.iter().position(|o| revealed(o)) else {
            return Err(usage("a scripted episode never reached the oracle"));
        };
        if q == 0 || q + 1 >= obs.len() {
            return Err(usage("a scripted episode has no step before or after the query"));
        }
        let belief_at = |t: usize, which: u64| -> Result<Sample> {
            let history = History::from_trajectory(&obs[..=t], &acts[..t]);
            let b = model.sample_belief(&history, belief_samples, seeding::derive(seed, &[tag("belief-viz"), k as u64, which]))?;
            Ok(Sample {
                mean: b.mean().to_vec(),
                std: b.variance().iter().map(|v| v.sqrt()).collect(),
            })
        };
        pre.push(belief_at(q - 1, 0)?);
        post.push(belief_at(q + 1, 1)?);
        truth.push(helper.correct_treasure(&ep.states[q]));
    }

    let nearest = |m: &[f64]| {
        let d = |t: &[f32; 2]| (m[0] - t[0] as f64).powi(2) + (m[1] - t[1] as f64).powi(2);
        (0..3).min_by(|&a, &b| d(&treasures[a]).total_cmp(&d(&treasures[b]))).expect("three treasures")
    };
    let correct = post.iter().zip(&truth).filter(|(s, &t)| nearest(&s.mean) == t).count();
    let report = BeliefReport {
        n_episodes,
        accuracy: correct as f64 / n_episodes as f64,
        mean_std_pre: overall_std(&pre),
        mean_std_post: overall_std(&post),
        pre_query: cluster(None, &pre.iter().collect::<Vec<_>>()),
        post_query: (0..3)
            .filter_map(|t| {
                let members: Vec<&Sample> = post.iter().zip(&truth).filter(|(_, &x)| x == t).map(|(s, _)| s).collect();
                (!members.is_empty()).then(|| cluster(Some(t), &members))
            })
            .collect(),
    };

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        let draw = |title: &str, groups: &[(BeliefCluster, Vec<&Sample>)]| {
            let mut canvas = Canvas::new((-0.2, 1.2), (-0.2, 1.2));
            for (k, t) in treasures.iter().enumerate() {
                canvas.label(t[0] as f64, t[1] as f64, &format!("T{k}"), "black");
            }
            for (g, (summary, members)) in groups.iter().enumerate() {
                let colour = PALETTE[g % PALETTE.len()];
                for s in members {
                    canvas.dot(s.mean[0], s.mean[1], 2.0, colour);
                }
                canvas.dot(summary.mean[0], summary.mean[1], 5.0, colour);
                canvas.dashed_ellipse(summary.mean[0], summary.mean[1], summary.std[0], summary.std[1], colour);
            }
            canvas.finish(title, "treasure x", "treasure y")
        };
        let pre_groups = vec![(report.pre_query.clone(), pre.iter().collect())];
        let post_groups: Vec<(BeliefCluster, Vec<&Sample>)> = report
            .post_query
            .iter()
            .map(|c| {
                let t = c.treasure.expect("grouped");
                (c.clone(), post.iter().zip(&truth).filter(|(_, &x)| x == t).map(|(s, _)| s).collect())
            })
            .collect();
        fs::write(dir.join("belief_pre.svg"), draw("belief before the oracle query", &pre_groups))?;
        fs::write(dir.join("belief_post.svg"), draw("belief after the oracle query", &post_groups))?;
        fs::write(dir.join("belief_report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}
