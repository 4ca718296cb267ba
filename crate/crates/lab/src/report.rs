//! CSV and JSON output.
//!
//! Layout under the output directory:
//!
//! ```text
//! manifests/<run>.json    one manifest per grid cell
//! checkpoints/<run>.vaec  binary checkpoints
//! runs/<run>/             level1_R.csv, ces.csv, patching.csv, mediation.csv
//! metrics.csv downstream.csv summary_by_domain.csv pairwise_tests.csv
//! correlations.csv ablation.csv failed_runs.csv heatmap_*.csv summary.json
//! ```
//!
//! Empty cells stand for undefined values.

use std::path::{Path, PathBuf};

use csv::Writer;

use crate::aggregate::{Heatmap, Report};
use crate::error::{io_err, Result};
use crate::manifest::RunManifest;

pub const MANIFEST_DIR: &str = "manifests";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const RUN_DIR: &str = "runs";

pub fn prepare_run_dirs(out: &Path) -> Result<()> {
    for d in [MANIFEST_DIR, CHECKPOINT_DIR, RUN_DIR] {
        let p = out.join(d);
        std::fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn writer(path: &Path) -> Result<Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    Ok(Writer::from_writer(file))
}

fn finish(mut w: Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(io_err(path))
}

/// Manifest plus the per-run CSVs.
pub fn write_run_files(out: &Path, m: &RunManifest) -> Result<()> {
    let slug = m.run_id.slug();
    m.save(&out.join(MANIFEST_DIR).join(format!("{slug}.json")))?;
    let Some(o) = &m.outputs else { return Ok(()) };
    let dir = out.join(RUN_DIR).join(&slug);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let dims = o.metrics.ces_per_dim.len();

    let path = dir.join("level1_R.csv");
    let mut w = writer(&path)?;
    let mut header = vec!["group".to_string()];
    header.extend((0..dims).map(|d| format!("z{d}")));
    header.push("linearity_r2".into());
    w.write_record(&header)?;
    for (g, name) in o.group_names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend(o.importance.r.row(g).iter().map(|v| num(*v)));
        rec.push(num(o.importance.linearity_r2[g]));
        w.write_record(&rec)?;
    }
    finish(w, &path)?;

    let path = dir.join("ces.csv");
    let mut w = writer(&path)?;
    w.write_record(["dim", "ces_calibrated", "ces_fixed", "sigma_eff", "mu_mean"])?;
    for d in 0..dims {
        w.write_record([
            d.to_string(),
            num(o.metrics.ces_per_dim[d]),
            num(o.ces_fixed_per_dim[d]),
            num(o.posterior.sigma_eff[d]),
            num(o.posterior.mu_mean[d]),
        ])?;
    }
    finish(w, &path)?;

    let path = dir.join("patching.csv");
    let mut w = writer(&path)?;
    w.write_record(["layer", "compound", "direct"])?;
    let p = &o.patching.mean_profile;
    for l in 0..p.compound.len() {
        w.write_record([l.to_string(), num(p.compound[l]), num(p.direct[l])])?;
    }
    finish(w, &path)?;

    let path = dir.join("mediation.csv");
    let mut w = writer(&path)?;
    let layers = o.mediation.mr.first().map_or(0, Vec::len);
    let mut header = vec!["group".to_string()];
    header.extend((0..layers).map(|l| format!("layer{l}")));
    header.extend(["total_effect".to_string(), "nis".to_string()]);
    w.write_record(&header)?;
    for (g, name) in o.group_names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        rec.extend(o.mediation.mr[g].iter().map(|v| opt(*v)));
        rec.push(num(o.mediation.total_effect[g]));
        rec.push(num(o.mediation.nis));
        w.write_record(&rec)?;
    }
    finish(w, &path)
}

fn write_heatmap(path: &Path, h: &Heatmap) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec![String::new()];
    header.extend(h.col_labels.iter().cloned());
    w.write_record(&header)?;
    for (label, row) in h.row_labels.iter().zip(&h.values) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|v| opt(*v)));
        w.write_record(&rec)?;
    }
    finish(w, path)
}

/// Writes every aggregate table; returns the paths written.
pub fn write_report(out: &Path, report: &Report) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut written = Vec::new();

    let path = out.join("metrics.csv");
    let mut w = writer(&path)?;
    w.write_record([
        "dataset", "domain", "architecture", "seed", "final_mse", "epochs_run", "ces_mean", "specificity",
        "modularity", "fgd", "mig", "dci_completeness", "nis", "min_linearity_r2", "max_telescoping_error",
    ])?;
    for r in &report.runs {
        w.write_record([
            r.dataset.clone(),
            r.domain.name().into(),
            r.architecture.name().into(),
            r.seed.to_string(),
            num(r.final_mse),
            r.epochs_run.to_string(),
            num(r.ces_mean),
            num(r.specificity),
            num(r.modularity),
            num(r.fgd),
            num(r.mig),
            opt(r.dci_completeness),
            num(r.nis),
            num(r.min_linearity_r2),
            num(r.max_telescoping_error),
        ])?;
    }
    finish(w, &path)?;
    written.push(path);

    let path = out.join("downstream.csv");
    let mut w = writer(&path)?;
    w.write_record(["dataset", "architecture", "seed", "accuracy", "auc", "robustness", "dp_gap"])?;
    for r in &report.runs {
        w.write_record([
            r.dataset.clone(),
            r.architecture.name().into(),
            r.seed.to_string(),
            opt(r.accuracy),
            opt(r.auc),
            opt(r.robustness),
            opt(r.dp_gap),
        ])?;
    }
    finish(w, &path)?;
    written.push(path);

    let path = out.join("summary_by_domain.csv");
    let mut w = writer(&path)?;
    w.write_record(["architecture", "domain", "quantity", "n", "mean", "std"])?;
    for s in &report.by_domain {
        w.write_record([
            s.architecture.name().into(),
            s.domain.name().into(),
            s.quantity.clone(),
            s.n.to_string(),
            num(s.mean),
            opt(s.std),
        ])?;
    }
    finish(w, &path)?;
    written.push(path);

    let path = out.join("pairwise_tests.csv");
    let mut w = writer(&path)?;
    w.write_record([
        "metric", "architecture_a", "architecture_b", "n", "mean_difference", "w_plus", "exact", "zeros_dropped",
        "p_raw", "p_adjusted", "significant", "cohens_d", "d_degenerate",
    ])?;
    for t in &report.pairwise {
        let d = match (t.cohens_d, t.d_degenerate) {
            (Some(d), _) => num(d),
            (None, true) if t.mean_difference > 0.0 => "inf".into(),
            (None, true) if t.mean_difference < 0.0 => "-inf".into(),
            _ => String::new(),
        };
        w.write_record([
            t.metric.clone(),
            t.architecture_a.name().into(),
            t.architecture_b.name().into(),
            t.n.to_string(),
            num(t.mean_difference),
            num(t.w_plus),
            t.exact.to_string(),
            t.zeros_dropped.to_string(),
            num(t.p_raw),
            num(t.p_adjusted),
            t.significant.to_string(),
            d,
            t.d_degenerate.to_string(),
        ])?;
    }
    finish(w, &path)?;
    written.push(path);

    let path = out.join("correlations.csv");
    let mut w = writer(&path)?;
    w.write_record(["x", "y", "n", "r", "p"])?;
    for c in report.correlations.iter().chain(std::iter::once(&report.ces_mse)) {
        w.write_record([c.x.clone(), c.y.clone(), c.n.to_string(), opt(c.r), opt(c.p)])?;
    }
    finish(w, &path)?;
    written.push(path);

    let path = out.join("ablation.csv");
    let mut w = writer(&path)?;
    w.write_record([
        "dataset", "architecture", "seed", "semantic_modularity", "random_modularity_mean", "semantic_fgd",
        "random_fgd_mean", "modularity_gap", "fgd_gap",
    ])?;
    for a in &report.ablation {
        w.write_record([
            a.dataset.clone(),
            a.architecture.name().into(),
            a.seed.to_string(),
            num(a.semantic_modularity),
            num(a.random_modularity_mean),
            num(a.semantic_fgd),
            num(a.random_fgd_mean),
            num(a.modularity_gap),
            num(a.fgd_gap),
        ])?;
    }
    finish(w, &path)?;
    written.push(path);

    let path = out.join("failed_runs.csv");
    let mut w = writer(&path)?;
    w.write_record(["run", "stage", "message"])?;
    for f in &report.failed {
        w.write_record([&f.run, &f.stage, &f.message])?;
    }
    finish(w, &path)?;
    written.push(path);

    for h in &report.heatmaps {
        let path = out.join(format!("heatmap_{}.csv", h.name));
        write_heatmap(&path, h)?;
        written.push(path);
    }

    let path = out.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(report)?).map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}

pub fn load_report(path: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}
