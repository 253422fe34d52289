use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_belief-marl")).args(args).output().unwrap()
}

fn write_config(dir: &Path, algorithm: &str) -> String {
    let path = dir.join(format!("{algorithm}.toml"));
    std::fs::write(
        &path,
        format!(
            r#"algorithm = "{algorithm}"
episodes = 4
seeds = [0, 1]
hidden = [8]
gru_hidden = 4
latent_dim = 2
belief_samples = 2
warmup_episodes = 2
batch_episodes = 2
dataset = "{}"

[env]
name = "oracle"
grid_size = 4
max_steps = 8

[pretrain]
max_epochs = 2
history_hidden = 4
mlp_hidden = [8]
"#,
            dir.join("data.bin").display()
        ),
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |p: &str| d.join(p).to_string_lossy().into_owned();
    let config = write_config(d, "belief_i2q");

    let out = cli(&["collect", "--config", &config, "--episodes", "12", "--seed", "4", "--out", &s("data.bin")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = cli(&["pretrain", "--config", &config, "--out", &s("belief")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("belief/belief_shared.ckpt").exists());

    let out = cli(&["train", "--config", &config, "--seed", "1", "--out", &s("runs")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(d.join("runs/belief_i2q_seed1/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 5);
    assert!(metrics.starts_with("seed,episode,return,epsilon,loss_qss,loss_f,loss_q"));
    assert!(d.join("runs/belief_i2q_seed1/manifest.json").exists());

    let out = cli(&["train", "--config", &config, "--out", &s("runs")]);
    assert!(out.status.success());
    let out = cli(&["eval", "--config", &config, "--out", &s("runs")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("runs/eval_belief_i2q.json").exists());

    let out = cli(&[
        "plot-curves",
        "--out",
        &s("plots"),
        "--window",
        "2",
        &s("runs/belief_i2q_seed0/metrics.csv"),
        &s("runs/belief_i2q_seed1/metrics.csv"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("plots/curves.svg").exists() && d.join("plots/curves.csv").exists());

    let out = cli(&["plot-belief", "--config", &config, "--checkpoint", &s("belief"), "--episodes", "6", "--out", &s("viz")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("viz/belief_post.svg").exists());
}

#[test]
fn grid_search_writes_a_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = write_config(d, "rec_i2q");
    let mut text = std::fs::read_to_string(&config).unwrap();
    text.push_str("\n[grid]\nlr_q = [0.001]\nlr_qss = [0.001]\nlr_belief = [0.001]\nlr_f = [0.001]\nlambda = [0.1, 0.3]\nlatent_dim = [8]\n");
    std::fs::write(&config, text).unwrap();
    let out = cli(&["grid-search", "--config", &config, "--out", &d.join("g").to_string_lossy()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("g/grid/ranking.json").exists());
    assert!(d.join("g/grid/best.toml").exists());
}

#[test]
fn failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad = d.join("bad.toml");
    std::fs::write(&bad, "gamma = 2.0").unwrap();
    let out = cli(&["train", "--config", &bad.to_string_lossy()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));

    // belief_i2q without a dataset or checkpoint
    let c = d.join("c.toml");
    std::fs::write(&c, "episodes = 2\n").unwrap();
    assert!(!cli(&["train", "--config", &c.to_string_lossy(), "--out", &d.to_string_lossy()]).status.success());

    assert!(!cli(&["collect", "--env", "nowhere", "--out", &d.join("x").to_string_lossy()]).status.success());
    assert!(!cli(&["collect", "--env", "oracle"]).status.success());
    assert!(!cli(&["frobnicate"]).status.success());

    let mut text = std::fs::read_to_string(write_config(d, "rec_i2q")).unwrap();
    text = text.replace("name = \"oracle\"\ngrid_size = 4\nmax_steps = 8", "name = \"gathering\"");
    let g = d.join("gathering.toml");
    std::fs::write(&g, text).unwrap();
    std::fs::create_dir_all(d.join("empty")).unwrap();
    assert!(!cli(&["plot-belief", "--config", &g.to_string_lossy(), "--checkpoint", &d.join("empty").to_string_lossy()]).status.success());
}
