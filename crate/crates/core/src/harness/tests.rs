use std::sync::Arc;

use super::*;
use crate::belief::{BeliefModel, BeliefSpec};
use crate::data::collect_random;
use crate::envs::{EnvConfig, GatheringConfig, OracleConfig};
use crate::error::Error;
use crate::seeding;

fn small_oracle() -> EnvConfig {
    EnvConfig::Oracle(OracleConfig {
        grid_size: 4,
        max_steps: 8,
        ..OracleConfig::default()
    })
}

fn tiny_config(algorithm: Algorithm, out: &std::path::Path) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        algorithm,
        env: small_oracle(),
        episodes: Some(6),
        seeds: vec![3],
        hidden: vec![8],
        gru_hidden: 4,
        latent_dim: 2,
        belief_samples: 2,
        batch_episodes: 2,
        warmup_episodes: 2,
        final_window: 3,
        output_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    };
    c.pretrain.history_hidden = 4;
    c.pretrain.mlp_hidden = vec![8];
    c.pretrain.max_epochs = 2;
    c.pretrain.episodes = 20;
    c
}

#[test]
fn defaults() {
    let c = ExperimentConfig::default();
    assert_eq!(c.tau, 0.005);
    assert_eq!(c.gamma, 0.99);
    assert_eq!(c.epsilon.start, 0.6);
    assert_eq!(c.buffer_capacity, 10_000);
    assert_eq!(c.batch_episodes, 32);
    c.validate().unwrap();
}

#[test]
fn episode_budget_depends_on_the_environment() {
    let mut c = ExperimentConfig::default();
    assert_eq!(c.episode_budget(), 20_000);
    c.env = EnvConfig::Gathering(GatheringConfig::default());
    assert_eq!(c.episode_budget(), 30_000);
    c.episodes = Some(7);
    assert_eq!(c.episode_budget(), 7);
}

#[test]
fn config_toml_round_trip() {
    let mut c = ExperimentConfig::default();
    c.dataset = Some("data/oracle.bin".into());
    c.max_batch_transitions = Some(512);
    c.learning_rates.q = 0.0003;
    let text = c.to_toml().unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    let c = ExperimentConfig {
        env: EnvConfig::Gathering(GatheringConfig::default()),
        algorithm: Algorithm::RecHystIql,
        ..ExperimentConfig::default()
    };
    assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    assert!(matches!(ExperimentConfig::from_toml("gama = 0.9"), Err(Error::Config(_))));
    assert!(ExperimentConfig::from_toml("[epsilon]\nstart = 0.6\nfinal = 0.1").is_err());
    assert!(ExperimentConfig::from_toml("gamma = 1.0").is_err());
    assert!(ExperimentConfig::from_toml("tau = 0.0").is_err());
    assert!(ExperimentConfig::from_toml("seeds = []").is_err());
    assert!(ExperimentConfig::from_toml("hysteretic_beta = 2.0").is_err());
    assert!(ExperimentConfig::from_toml("[epsilon]\nstart = 0.1\nend = 0.5").is_err());
    let c = ExperimentConfig::from_toml("algorithm = \"rec_i2q\"\nepisodes = 5\n[env]\nname = \"escape\"").unwrap();
    assert_eq!(c.algorithm, Algorithm::RecI2q);
    assert_eq!(c.env.name(), "escape");
}

#[test]
fn epsilon_decays_linearly_then_holds() {
    let e = EpsilonSchedule::default();
    assert_eq!(e.at(0, 100), 0.6);
    assert!((e.at(25, 100) - 0.325).abs() < 1e-12);
    assert!((e.at(50, 100) - 0.05).abs() < 1e-12);
    assert!((e.at(99, 100) - 0.05).abs() < 1e-12);
    let flat = EpsilonSchedule {
        decay_fraction: 0.0,
        ..e
    };
    assert_eq!(flat.at(0, 100), 0.05);
}

#[test]
fn grid_axes() {
    let axes = GridAxes::default();
    assert_eq!(axes.lambda, vec![0.1, 0.3]);
    assert_eq!(axes.latent_dim, vec![8, 16, 32]);
    assert_eq!(axes.lr_q, vec![0.001, 0.0003]);
    let points = grid_points(&axes).unwrap();
    assert_eq!(points.len(), 2 * 2 * 2 * 2 * 2 * 3);
    for (k, p) in points.iter().enumerate() {
        assert!(!points[k + 1..].contains(p));
    }
    let empty = GridAxes {
        lambda: vec![],
        ..GridAxes::default()
    };
    assert!(grid_points(&empty).is_err());
}

#[test]
fn single_point_grid_returns_that_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = tiny_config(Algorithm::RecHystIql, dir.path());
    base.episodes = Some(3);
    base.seeds = vec![0, 1];
    base.grid = GridAxes {
        lr_q: vec![0.0003],
        lr_qss: vec![0.001],
        lr_belief: vec![0.001],
        lr_f: vec![0.001],
        lambda: vec![0.3],
        latent_dim: vec![8],
    };
    let result = grid_search(&base).unwrap();
    assert_eq!(result.ranking.len(), 1);
    assert_eq!(result.best.learning_rates.q, 0.0003);
    assert_eq!(result.best.lambda, 0.3);
    assert_eq!(result.logs.len(), 2);
    assert!(dir.path().join("grid/ranking.json").exists());
}

#[test]
fn smoothing() {
    let xs = [1.0, 5.0, -2.0, 4.0];
    assert_eq!(moving_average(&xs, 1), xs.to_vec());
    assert_eq!(moving_average(&[3.0; 10], 4), vec![3.0; 10]);
    assert_eq!(moving_average(&xs, 2), vec![1.0, 3.0, 1.5, 1.0]);
    assert_eq!(moving_average(&xs, 100)[3], 2.0);
}

fn log_of(seed: u64, returns: &[f64]) -> MetricsLog {
    MetricsLog {
        rows: returns
            .iter()
            .enumerate()
            .map(|(episode, &ret)| MetricsRow {
                seed,
                episode,
                ret,
                epsilon: 0.1,
                loss_qss: None,
                loss_f: Some(-0.5),
                loss_q: Some(1e-3),
            })
            .collect(),
    }
}

#[test]
fn seed_aggregation() {
    let logs = [log_of(0, &[0.0]), log_of(1, &[1.0]), log_of(2, &[2.0])];
    let s = aggregate("x", &logs, 1).unwrap();
    assert_eq!(s.mean, vec![1.0]);
    assert!((s.std[0] - 0.816_496_580_927_726).abs() < 1e-12);
    let one = aggregate("c", &[log_of(0, &[0.7; 5])], 100).unwrap();
    assert!(one.mean.iter().all(|m| (m - 0.7).abs() < 1e-15));
    assert_eq!(one.std, vec![0.0; 5]);
    assert!(aggregate("x", &[log_of(0, &[1.0, 2.0]), log_of(1, &[1.0])], 1).is_err());
    assert!(aggregate("x", &[], 1).is_err());
}

#[test]
fn curves_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let groups = vec![
        ("a".to_string(), vec![log_of(0, &[0.0, 1.0, 2.0]), log_of(1, &[1.0, 1.0, 1.0])]),
        ("b".to_string(), vec![log_of(0, &[0.5; 3])]),
    ];
    let series = plot_curves(&groups, 2, dir.path(), "oracle").unwrap();
    assert_eq!(series.len(), 2);
    let csv = std::fs::read_to_string(dir.path().join("oracle.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    let svg = std::fs::read_to_string(dir.path().join("oracle.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polygon"));
}

#[test]
fn metrics_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let log = log_of(4, &[0.25, -0.01, 1.0 / 3.0]);
    let path = dir.path().join("m.csv");
    std::fs::write(&path, log.to_csv()).unwrap();
    assert_eq!(MetricsLog::load(&path).unwrap(), log);
    std::fs::write(&path, "seed,episode\n1,2\n").unwrap();
    assert!(matches!(MetricsLog::load(&path), Err(Error::Corrupt { .. })));
    assert_eq!(log.final_mean(2), Some((-0.01 + 1.0 / 3.0) / 2.0));
}

#[test]
fn runs_are_deterministic_and_accounted() {
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("data.bin");
    collect_random(&small_oracle(), 20, 1).unwrap().save(&data_path).unwrap();
    for alg in Algorithm::ALL {
        let mut bytes = Vec::new();
        for run in 0..2 {
            let mut c = tiny_config(alg, &dir.path().join(format!("run{run}")));
            c.dataset = Some(data_path.clone());
            let out = run_experiment(&c, 3).unwrap();
            assert_eq!(out.metrics.rows.len(), 6);
            let csv = std::fs::read(out.dir.join("metrics.csv")).unwrap();
            assert_eq!(csv.iter().filter(|&&b| b == b'\n').count(), 7);
            bytes.push(csv);
            let manifest: serde_json::Value =
                serde_json::from_slice(&std::fs::read(out.dir.join("manifest.json")).unwrap()).unwrap();
            assert_eq!(manifest["config"]["tau"], 0.005);
            assert!(out.dir.join("agent1.ckpt").exists());
        }
        assert_eq!(bytes[0], bytes[1], "{}", alg.name());
    }
}

#[test]
fn different_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny_config(Algorithm::RecI2q, dir.path());
    let a = run_experiment(&c, 0).unwrap().metrics;
    let b = run_experiment(&c, 1).unwrap().metrics;
    assert_ne!(a, b);
}

#[test]
fn early_stop_and_missing_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny_config(Algorithm::I2q, dir.path());
    let out = run_experiment_with(&c, 0, |row| row.episode == 2).unwrap();
    assert_eq!(out.metrics.rows.len(), 3);
    assert!(out.stopped_early);
    let c = tiny_config(Algorithm::BeliefI2q, dir.path());
    assert!(matches!(run_experiment(&c, 0), Err(Error::Config(_))));
    let mut c = tiny_config(Algorithm::BeliefI2q, dir.path());
    c.dataset = Some(dir.path().join("missing.bin"));
    assert!(run_experiment(&c, 0).is_err());
}

#[test]
fn belief_checkpoints_are_reused() {
    let dir = tempfile::tempdir().unwrap();
    let data = collect_random(&small_oracle(), 20, 1).unwrap();
    let c = tiny_config(Algorithm::BeliefI2q, dir.path());
    let (set, reports) = pretrain_beliefs(&data, &c, 0).unwrap();
    assert_eq!(reports.len(), 1);
    let ckpt = dir.path().join("belief");
    std::fs::create_dir_all(&ckpt).unwrap();
    set.save(&ckpt, "oracle").unwrap();
    let mut c = c;
    c.belief_checkpoint = Some(ckpt);
    let a = run_experiment(&c, 5).unwrap().metrics;
    let b = run_experiment(&c, 5).unwrap().metrics;
    assert_eq!(a, b);
}

#[test]
fn evaluation_compares_with_random_policy() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_config(Algorithm::RecHystIql, dir.path());
    c.seeds = vec![0, 1];
    run_seeds(&c).unwrap();
    let report = evaluate(&c).unwrap();
    assert_eq!(report.final_returns.len(), 2);
    assert_eq!(report.random_policy.n, 20);
    assert!(report.random_policy.standard_error > 0.0);
}

#[test]
fn return_stats() {
    let s = ReturnStats::from_returns(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(s.mean, 2.5);
    assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert!((s.standard_error - s.std / 2.0).abs() < 1e-12);
    assert!(ReturnStats::from_returns(&[]).is_err());
}

fn untrained(latent: usize) -> BeliefModel {
    let mut spec = BeliefSpec::new(6, 9, 2, latent);
    spec.history_hidden = 8;
    spec.mlp_hidden = vec![8];
    BeliefModel::new(spec, &mut seeding::rng(0))
}

#[test]
fn belief_plot_needs_the_oracle() {
    let model = untrained(2);
    let env = EnvConfig::Gathering(GatheringConfig::default());
    assert!(matches!(plot_belief(&model, &env, 5, 2, 0, None), Err(Error::Unsupported(_))));
}

#[test]
fn untrained_belief_is_uninformative() {
    let dir = tempfile::tempdir().unwrap();
    let model = Arc::new(untrained(2));
    let env = EnvConfig::Oracle(OracleConfig::default());
    let r = plot_belief(&model, &env, 60, 4, 0, Some(dir.path())).unwrap();
    assert_eq!(r.pre_query.treasure, None);
    assert_eq!(r.post_query.len(), 3);
    assert_eq!(r.post_query.iter().map(|c| c.count).sum::<usize>(), 60);
    assert!((r.mean_std_pre - r.mean_std_post).abs() < 0.1 * r.mean_std_pre);
    // the post-query group means sit together as well
    let m = &r.post_query;
    for g in m {
        assert!((g.mean[0] - m[0].mean[0]).abs() < 0.05 && (g.mean[1] - m[0].mean[1]).abs() < 0.05);
    }
    for f in ["belief_pre.svg", "belief_post.svg", "belief_report.json"] {
        assert!(dir.path().join(f).exists());
    }
}
