//! Grid runner: manifests, determinism and failure isolation.

mod common;

use circuitlab::manifest::{load_manifests, RunStatus};
use circuitlab::pipeline::{grid_cells, run_grid};
use circuitlab::report::MANIFEST_DIR;
use circuitlab_core::checkpoint;
use circuitlab_core::vae::Variant;
use common::tiny_config;

#[test]
fn single_cell_manifest_is_fully_populated() {
    let cfg = tiny_config("");
    let dir = tempfile::tempdir().unwrap();
    let manifests = run_grid(&cfg, 1, Some(dir.path())).unwrap();
    assert_eq!(manifests.len(), 1);
    let m = &manifests[0];
    assert_eq!(m.status, RunStatus::Completed);
    assert!(m.dataset_hash.is_some() && m.architecture.is_some() && m.domain.is_some());
    let o = m.outputs.as_ref().unwrap();
    assert_eq!(o.importance.r.cols(), 2);
    assert_eq!(o.importance.r.rows(), o.group_names.len());
    assert_eq!(o.ces_fixed_per_dim.len(), 2);
    assert_eq!(o.patching.mean_profile.compound.len(), 2);
    assert_eq!(o.mediation.mr.len(), o.group_names.len());
    assert!(o.metrics.dci_completeness.is_some(), "synthetic data has factors");
    assert!(o.downstream.is_some() && o.ablation.is_some());

    let rel = m.checkpoint.as_ref().unwrap();
    let bytes = std::fs::read(dir.path().join(rel)).unwrap();
    let model = checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(model.final_mse.to_bits(), o.training.final_mse.to_bits());

    let on_disk = load_manifests(&dir.path().join(MANIFEST_DIR)).unwrap();
    assert_eq!(on_disk, manifests);
    let run_dir = dir.path().join("runs").join(m.run_id.slug());
    for f in ["level1_R.csv", "ces.csv", "patching.csv", "mediation.csv"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn reruns_are_identical_modulo_wall_clock() {
    let cfg = tiny_config("");
    let a = run_grid(&cfg, 1, None).unwrap();
    let b = run_grid(&cfg, 2, None).unwrap();
    assert_eq!(a[0].content_hash(), b[0].content_hash());
    assert_eq!(a[0].outputs, b[0].outputs);
}

#[test]
fn grid_arithmetic_and_order() {
    let mut cfg = tiny_config(
        r#"
        [[datasets]]
        name = "tiny2"
        encoder_widths = [6, 4]
        data_seed = 9
        source = { kind = "synthetic_tabular", spec = { n_rows = 100 } }
        "#,
    );
    cfg.architectures = Variant::ALL.to_vec();
    cfg.seeds = vec![1, 2];
    cfg.train.max_epochs = 1;
    cfg.ablation.enabled = false;
    assert_eq!(grid_cells(&cfg).len(), 20);
    let manifests = run_grid(&cfg, 0, None).unwrap();
    assert_eq!(manifests.len(), 20);
    assert!(manifests.iter().all(|m| m.is_completed()));
    let ids: Vec<_> = manifests.iter().map(|m| m.run_id.clone()).collect();
    let expected: Vec<_> = grid_cells(&cfg)
        .into_iter()
        .map(|(d, a, s)| (cfg.datasets[d].name.clone(), a, s))
        .collect();
    for (id, (d, a, s)) in ids.iter().zip(expected) {
        assert_eq!((id.dataset.clone(), id.architecture, id.seed), (d, a, s));
    }
}

#[test]
fn a_broken_dataset_does_not_stop_the_grid() {
    let cfg = tiny_config(
        r#"
        [[datasets]]
        name = "missing"
        source = { kind = "csv", path = "/nonexistent/data.csv", schema = "/nonexistent/schema.toml" }
        "#,
    );
    let manifests = run_grid(&cfg, 1, None).unwrap();
    assert_eq!(manifests.len(), 2);
    assert!(manifests[0].is_completed());
    match &manifests[1].status {
        RunStatus::Failed { stage, .. } => assert_eq!(stage, "ingest"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn a_failing_stage_marks_only_its_cell() {
    // Every label is negative, so the downstream probe cannot be fitted.
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("a,b,y\n");
    for i in 0..60 {
        csv.push_str(&format!("{},{},0\n", i as f64 * 0.1, (i * 7 % 13) as f64));
    }
    std::fs::write(dir.path().join("one_class.csv"), csv).unwrap();
    std::fs::write(
        dir.path().join("one_class.toml"),
        r#"
        [[columns]]
        name = "a"
        kind = "continuous"
        group = "first"
        [[columns]]
        name = "b"
        kind = "continuous"
        group = "second"
        [[columns]]
        name = "y"
        kind = "label"
        positive = { equals = "1" }
        "#,
    )
    .unwrap();
    let extra = format!(
        r#"
        [[datasets]]
        name = "one_class"
        encoder_widths = [4, 3]
        source = {{ kind = "csv", path = "{}", schema = "{}" }}
        "#,
        dir.path().join("one_class.csv").display(),
        dir.path().join("one_class.toml").display()
    );
    let cfg = tiny_config(&extra);
    let manifests = run_grid(&cfg, 1, Some(dir.path())).unwrap();
    assert!(manifests[0].is_completed());
    match &manifests[1].status {
        RunStatus::Failed { stage, message } => {
            assert_eq!(stage, "probe", "{message}");
        }
        other => panic!("{other:?}"),
    }
    assert!(manifests[1].outputs.is_none());
    assert!(dir.path().join("manifests").join(format!("{}.json", manifests[1].run_id.slug())).exists());
}
