//! Aggregation and report files from hand-made manifests.

mod common;

use circuitlab::aggregate::{aggregate, Report};
use circuitlab::config::{CorrectionFamily, StatsConfig};
use circuitlab::manifest::RunManifest;
use circuitlab::pipeline::run_grid;
use circuitlab::report::{load_report, write_report};
use circuitlab_core::vae::Variant;
use common::tiny_config;

/// One real manifest used as a template.
fn template() -> RunManifest {
    run_grid(&tiny_config(""), 1, None).unwrap().remove(0)
}

fn variant_of(t: &RunManifest, dataset: &str, arch: Variant, seed: u64, ces: f64, mse: f64) -> RunManifest {
    let mut m = t.clone();
    m.run_id.dataset = dataset.into();
    m.run_id.architecture = arch;
    m.run_id.seed = seed;
    let o = m.outputs.as_mut().unwrap();
    o.metrics.ces_mean = ces;
    o.training.final_mse = mse;
    m
}

#[test]
fn identical_architectures_give_p_one_and_degenerate_d() {
    let t = template();
    let mut ms = Vec::new();
    for seed in 0..4 {
        for arch in [Variant::Standard, Variant::Beta] {
            ms.push(variant_of(&t, "d", arch, seed, 0.1 * seed as f64, 0.5));
        }
    }
    let report = aggregate(&ms, &StatsConfig::default());
    assert_eq!(report.pairwise.len(), 5);
    for test in &report.pairwise {
        assert_eq!(test.p_raw, 1.0);
        assert_eq!(test.p_adjusted, 1.0);
        assert!(test.d_degenerate);
        assert_eq!(test.cohens_d, Some(0.0));
        assert!(!test.significant);
    }
}

#[test]
fn ces_falling_with_mse_correlates_negatively() {
    let t = template();
    let ms: Vec<_> = (0..6)
        .map(|i| variant_of(&t, "d", Variant::Standard, i, 1.0 - 0.1 * i as f64, 0.2 + 0.05 * i as f64))
        .collect();
    let report = aggregate(&ms, &StatsConfig::default());
    assert!(report.ces_mse.r.unwrap() < -0.99);
    assert_eq!(report.ces_mse.n, 6);
}

#[test]
fn five_datasets_by_three_seeds_pair_fifteen_runs() {
    let t = template();
    let mut ms = Vec::new();
    for d in 0..5 {
        for seed in 0..3 {
            for (k, arch) in Variant::ALL.into_iter().enumerate() {
                let ces = 0.1 + 0.01 * k as f64 + 0.001 * (d * 3 + seed) as f64;
                ms.push(variant_of(&t, &format!("d{d}"), arch, seed, ces, 0.5));
            }
        }
    }
    let report = aggregate(&ms, &StatsConfig::default());
    assert_eq!(report.pairwise.len(), 50);
    assert!(report.pairwise.iter().all(|p| p.n == 15));
    let ces: Vec<_> = report.pairwise.iter().filter(|p| p.metric == "ces_mean").collect();
    assert!(ces.iter().all(|p| p.p_raw < 1e-4 && p.exact));

    let per_metric = aggregate(
        &ms,
        &StatsConfig {
            alpha: 0.05,
            correction: CorrectionFamily::PerMetric,
        },
    );
    for (g, p) in report.pairwise.iter().zip(&per_metric.pairwise) {
        assert_eq!(g.p_raw, p.p_raw);
        assert!(p.p_adjusted <= g.p_adjusted + 1e-15);
    }
}

#[test]
fn empty_grid_writes_header_only_tables() {
    let report = aggregate(&[], &StatsConfig::default());
    let dir = tempfile::tempdir().unwrap();
    write_report(dir.path(), &report).unwrap();
    for f in ["metrics.csv", "downstream.csv", "pairwise_tests.csv", "ablation.csv", "failed_runs.csv"] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert_eq!(text.lines().count(), 1, "{f}");
    }
}

#[test]
fn summary_json_round_trips_and_csv_shapes_match() {
    let t = template();
    let ms: Vec<_> = (0..3)
        .flat_map(|s| {
            [Variant::Standard, Variant::Factor]
                .into_iter()
                .map(move |a| (s, a))
        })
        .map(|(s, a)| variant_of(&t, "d", a, s, 0.1 + s as f64 * 0.01, 0.3))
        .collect();
    let report = aggregate(&ms, &StatsConfig::default());
    let dir = tempfile::tempdir().unwrap();
    let written = write_report(dir.path(), &report).unwrap();
    let back: Report = load_report(&dir.path().join("summary.json")).unwrap();
    assert_eq!(back, report);

    let heat = std::fs::read_to_string(dir.path().join("heatmap_ces_d.csv")).unwrap();
    let lines: Vec<&str> = heat.lines().collect();
    assert_eq!(lines.len(), 1 + 2, "two architectures");
    assert_eq!(lines[0].split(',').count(), 1 + 2, "two latent dimensions");
    assert!(written.iter().any(|p| p.ends_with("heatmap_mediation_d_factor.csv")));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 6);
}
