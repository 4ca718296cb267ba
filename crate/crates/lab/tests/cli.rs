//! The `circuitlab` binary end to end on a tiny grid.

use std::process::Command;

const CONFIG: &str = r#"
seeds = [3]
architectures = ["standard", "beta"]
latent_dim = 2
[train]
max_epochs = 2
batch_size = 32
[interventions]
eval_cap = 12
patch_pairs = 5
[ablation]
enabled = false
[[datasets]]
name = "tiny"
encoder_widths = [5, 3]
source = { kind = "synthetic_tabular", spec = { n_rows = 80 } }
"#;

fn circuitlab(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_circuitlab"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn run_analyze_report_round() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("grid.toml");
    std::fs::write(&config, CONFIG).unwrap();
    let out = dir.path().join("out");
    let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());

    let run = circuitlab(&["run", "--config", c, "--out", o, "--jobs", "1"]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(String::from_utf8_lossy(&run.stdout).contains("2 runs, 0 failed"));
    let first = std::fs::read(out.join("summary.json")).unwrap();

    let analyze = circuitlab(&["analyze", "--config", c, "--out", o]);
    assert!(analyze.status.success());
    assert_eq!(std::fs::read(out.join("summary.json")).unwrap(), first);

    let report = circuitlab(&["report", "--out", o]);
    assert!(report.status.success());
    assert!(String::from_utf8_lossy(&report.stdout).contains("2 completed runs"));

    let seeded = circuitlab(&["ablate", "--config", c, "--out", o, "--seed-override", "8", "--permutations", "2"]);
    assert!(seeded.status.success(), "{}", String::from_utf8_lossy(&seeded.stderr));
    assert!(out.join("manifests").join("tiny__beta__8.json").exists());
}

#[test]
fn bad_config_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "seeds = [1, 1]\n").unwrap();
    let run = circuitlab(&["run", "--config", config.to_str().unwrap()]);
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("error"));
}
