//! Experiment orchestration: configs, two-stage training runs, grid search,
//! learning curves and belief visualization.

mod belief_viz;
mod config;
mod grid;
mod plots;
mod run;
mod svg;

pub use belief_viz::{plot_belief, scripted_oracle_episodes, BeliefCluster, BeliefReport};
pub use config::{Algorithm, EpsilonSchedule, ExperimentConfig, GridAxes, LearningRates, PretrainSection};
pub use grid::{grid_points, grid_search, GridEntry, GridPoint, GridResult};
pub use plots::{aggregate, moving_average, plot_curves, CurveSeries};
pub use run::{
    evaluate, pretrain_beliefs, run_dir, run_experiment, run_experiment_with, run_seeds, EvalReport, MetricsLog,
    MetricsRow, ReturnStats, RunOutput, METRICS_HEADER,
};

#[cfg(test)]
mod tests;
