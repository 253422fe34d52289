use std::fs;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_experiment, ExperimentConfig, GridAxes, MetricsLog};
use crate::error::{usage, Result};

/// One combination of grid-axis values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lr_q: f64,
    pub lr_qss: f64,
    pub lr_belief: f64,
    pub lr_f: f64,
    pub lambda: f64,
    pub latent_dim: usize,
}

impl GridPoint {
    /// `base` with this point's values; outputs go under `grid/point_{index}`.
    pub fn apply(&self, base: &ExperimentConfig, index: usize) -> ExperimentConfig {
        let mut c = base.clone();
        c.learning_rates.q = self.lr_q;
        c.learning_rates.qss = self.lr_qss;
        c.learning_rates.belief = self.lr_belief;
        c.learning_rates.f = self.lr_f;
        c.lambda = self.lambda;
        c.latent_dim = self.latent_dim;
        c.output_dir = base.output_dir.join("grid").join(format!("point_{index}"));
        c
    }
}

/// Every combination of the axes, last axis varying fastest.
pub fn grid_points(axes: &GridAxes) -> Result<Vec<GridPoint>> {
    let lens = [
        axes.lr_q.len(),
        axes.lr_qss.len(),
        axes.lr_belief.len(),
        axes.lr_f.len(),
        axes.lambda.len(),
        axes.latent_dim.len(),
    ];
    if lens.contains(&0) {
        return Err(usage("grid search needs at least one value on every axis"));
    }
    let mut points = Vec::with_capacity(lens.iter().product());
    for &lr_q in &axes.lr_q {
        for &lr_qss in &axes.lr_qss {
            for &lr_belief in &axes.lr_belief {
                for &lr_f in &axes.lr_f {
                    for &lambda in &axes.lambda {
                        for &latent_dim in &axes.latent_dim {
                            points.push(GridPoint {
                                lr_q,
                                lr_qss,
                                lr_belief,
                                lr_f,
                                lambda,
                                latent_dim,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(points)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub index: usize,
    pub point: GridPoint,
    /// Final-window mean return averaged over seeds.
    pub mean_final_return: f64,
    pub per_seed: Vec<(u64, f64)>,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    pub best: ExperimentConfig,
    /// Best first; ties keep grid order.
    pub ranking: Vec<GridEntry>,
    /// `(point index, seed, log)` for every run.
    pub logs: Vec<(usize, u64, MetricsLog)>,
}

/// Runs every grid point on every configured seed and ranks the points by
/// mean final-window return. Writes `grid/ranking.json`.
pub fn grid_search(base: &ExperimentConfig) -> Result<GridResult> {
    base.validate()?;
    let points = grid_points(&base.grid)?;
    let configs: Vec<ExperimentConfig> = points.iter().enumerate().map(|(k, p)| p.apply(base, k)).collect();
    for c in &configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|k| base.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let logs = jobs
        .par_iter()
        .map(|&(k, s)| run_experiment(&configs[k], s).map(|out| (k, s, out.metrics)))
        .collect::<Result<Vec<_>>>()?;

    let mut ranking: Vec<GridEntry> = points
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let per_seed: Vec<(u64, f64)> = logs
                .iter()
                .filter(|(i, _, _)| *i == k)
                .map(|(_, s, log)| (*s, log.final_mean(base.final_window).unwrap_or(f64::NEG_INFINITY)))
                .collect();
            let mean_final_return = per_seed.iter().map(|x| x.1).sum::<f64>() / per_seed.len() as f64;
            GridEntry {
                index: k,
                point: p.clone(),
                mean_final_return,
                per_seed,
            }
        })
        .collect();
    ranking.sort_by(|a, b| b.mean_final_return.total_cmp(&a.mean_final_return).then(a.index.cmp(&b.index)));

    let dir = base.output_dir.join("grid");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("ranking.json"), serde_json::to_string_pretty(&ranking)?)?;
    Ok(GridResult {
        best: configs[ranking[0].index].clone(),
        ranking,
        logs,
    })
}
