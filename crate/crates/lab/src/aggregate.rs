//! Cross-run aggregation: summary tables, paired tests, correlations and
//! heatmaps. Everything is computed from manifests, so `analyze` can rerun
//! without training.

use std::collections::{BTreeMap, BTreeSet};

use circuitlab_core::data::Domain;
use circuitlab_core::math;
use circuitlab_core::stats::{cohens_d_from_differences, holm_sidak, pearson, wilcoxon_from_differences};
use circuitlab_core::vae::Variant;
use serde::{Deserialize, Serialize};

use crate::config::{CorrectionFamily, StatsConfig};
use crate::manifest::{RunManifest, RunStatus};

/// Metrics compared between architectures.
pub const METRICS: [&str; 5] = ["ces_mean", "specificity", "modularity", "fgd", "mig"];
/// Downstream measures correlated with the metrics.
pub const MEASURES: [&str; 4] = ["accuracy", "auc", "robustness", "dp_gap"];

/// One completed run, flattened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub dataset: String,
    pub domain: Domain,
    pub architecture: Variant,
    pub seed: u64,
    pub final_mse: f64,
    pub epochs_run: usize,
    pub ces_mean: f64,
    pub specificity: f64,
    pub modularity: f64,
    pub fgd: f64,
    pub mig: f64,
    pub dci_completeness: Option<f64>,
    pub nis: f64,
    pub min_linearity_r2: f64,
    pub max_telescoping_error: f64,
    pub accuracy: Option<f64>,
    pub auc: Option<f64>,
    pub robustness: Option<f64>,
    pub dp_gap: Option<f64>,
}

impl RunRow {
    pub fn from_manifest(m: &RunManifest) -> Option<Self> {
        let o = m.outputs.as_ref().filter(|_| m.status == RunStatus::Completed)?;
        let d = o.downstream.as_ref();
        Some(Self {
            dataset: m.run_id.dataset.clone(),
            domain: m.domain?,
            architecture: m.run_id.architecture,
            seed: m.run_id.seed,
            final_mse: o.training.final_mse,
            epochs_run: o.training.epochs_run,
            ces_mean: o.metrics.ces_mean,
            specificity: o.metrics.specificity,
            modularity: o.metrics.modularity,
            fgd: o.metrics.fgd,
            mig: o.metrics.mig,
            dci_completeness: o.metrics.dci_completeness,
            nis: o.mediation.nis,
            min_linearity_r2: o.importance.linearity_r2.iter().copied().fold(f64::INFINITY, f64::min),
            max_telescoping_error: o.patching.max_telescoping_error,
            accuracy: d.map(|d| d.accuracy),
            auc: d.map(|d| d.auc),
            robustness: d.map(|d| d.robustness),
            dp_gap: d.and_then(|d| d.dp_gap),
        })
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "ces_mean" => Some(self.ces_mean),
            "specificity" => Some(self.specificity),
            "modularity" => Some(self.modularity),
            "fgd" => Some(self.fgd),
            "mig" => Some(self.mig),
            "final_mse" => Some(self.final_mse),
            "accuracy" => self.accuracy,
            "auc" => self.auc,
            "robustness" => self.robustness,
            "dp_gap" => self.dp_gap,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub run: String,
    pub stage: String,
    pub message: String,
}

/// Mean and sample standard deviation of one quantity for one
/// (architecture, domain) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSummary {
    pub architecture: Variant,
    pub domain: Domain,
    pub quantity: String,
    pub n: usize,
    pub mean: f64,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub metric: String,
    pub architecture_a: Variant,
    pub architecture_b: Variant,
    pub n: usize,
    pub mean_difference: f64,
    pub w_plus: f64,
    pub exact: bool,
    pub zeros_dropped: usize,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub significant: bool,
    /// Paired Cohen's d; `None` when the differences do not vary.
    pub cohens_d: Option<f64>,
    pub d_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub x: String,
    pub y: String,
    pub n: usize,
    /// `None` when undefined (fewer than 3 runs or a constant variable).
    pub r: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub name: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// `None` where the cell has no value.
    pub values: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub dataset: String,
    pub architecture: Variant,
    pub seed: u64,
    pub semantic_modularity: f64,
    pub random_modularity_mean: f64,
    pub semantic_fgd: f64,
    pub random_fgd_mean: f64,
    pub modularity_gap: f64,
    pub fgd_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub alpha: f64,
    pub correction: CorrectionFamily,
    pub runs: Vec<RunRow>,
    pub failed: Vec<FailedRun>,
    pub by_domain: Vec<DomainSummary>,
    pub pairwise: Vec<PairwiseTest>,
    pub correlations: Vec<CorrelationCell>,
    pub ces_mse: CorrelationCell,
    pub ablation: Vec<AblationRow>,
    pub heatmaps: Vec<Heatmap>,
    pub warnings: Vec<String>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn correlate(x: &str, y: &str, pairs: &[(f64, f64)], warnings: &mut Vec<String>) -> CorrelationCell {
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    match pearson(&xs, &ys) {
        Ok(c) => CorrelationCell {
            x: x.into(),
            y: y.into(),
            n: c.n,
            r: finite(c.r),
            p: finite(c.p),
        },
        Err(e) => {
            warnings.push(format!("correlation {x} vs {y}: {e}"));
            CorrelationCell {
                x: x.into(),
                y: y.into(),
                n: pairs.len(),
                r: None,
                p: None,
            }
        }
    }
}

/// Builds the cross-run report. Runs are ordered by id first, so the output
/// depends only on the set of manifests.
pub fn aggregate(manifests: &[RunManifest], stats: &StatsConfig) -> Report {
    let mut sorted: Vec<&RunManifest> = manifests.iter().collect();
    sorted.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    let mut warnings = Vec::new();
    let mut failed = Vec::new();
    let mut runs = Vec::new();
    let mut ablation = Vec::new();
    for m in &sorted {
        match (&m.status, RunRow::from_manifest(m)) {
            (RunStatus::Completed, Some(row)) => {
                if let Some(a) = m.outputs.as_ref().and_then(|o| o.ablation.as_ref()) {
                    ablation.push(AblationRow {
                        dataset: row.dataset.clone(),
                        architecture: row.architecture,
                        seed: row.seed,
                        semantic_modularity: a.semantic_modularity,
                        random_modularity_mean: a.random_modularity_mean,
                        semantic_fgd: a.semantic_fgd,
                        random_fgd_mean: a.random_fgd_mean,
                        modularity_gap: a.modularity_gap,
                        fgd_gap: a.fgd_gap,
                    });
                }
                runs.push(row);
            }
            (RunStatus::Failed { stage, message }, _) => failed.push(FailedRun {
                run: m.run_id.to_string(),
                stage: stage.clone(),
                message: message.clone(),
            }),
            (RunStatus::Completed, None) => failed.push(FailedRun {
                run: m.run_id.to_string(),
                stage: "manifest".into(),
                message: "completed run without outputs".into(),
            }),
        }
    }

    let by_domain = domain_summaries(&runs);
    let pairwise = pairwise_tests(&runs, stats, &mut warnings);

    let mut correlations = Vec::new();
    for metric in METRICS {
        for measure in MEASURES {
            let pairs: Vec<(f64, f64)> = runs
                .iter()
                .filter_map(|r| Some((r.metric(metric)?, r.metric(measure)?)))
                .collect();
            correlations.push(correlate(metric, measure, &pairs, &mut warnings));
        }
    }
    let ces_mse_pairs: Vec<(f64, f64)> = runs.iter().map(|r| (r.ces_mean, r.final_mse)).collect();
    let ces_mse = correlate("ces_mean", "final_mse", &ces_mse_pairs, &mut warnings);

    let heatmaps = heatmaps(&sorted);

    Report {
        alpha: stats.alpha,
        correction: stats.correction,
        runs,
        failed,
        by_domain,
        pairwise,
        correlations,
        ces_mse,
        ablation,
        heatmaps,
        warnings,
    }
}

fn domain_summaries(runs: &[RunRow]) -> Vec<DomainSummary> {
    let mut cells: BTreeMap<(Variant, Domain), Vec<&RunRow>> = BTreeMap::new();
    for r in runs {
        cells.entry((r.architecture, r.domain)).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((architecture, domain), rows) in cells {
        for q in ["final_mse"].into_iter().chain(METRICS) {
            let v: Vec<f64> = rows.iter().filter_map(|r| r.metric(q)).collect();
            if v.is_empty() {
                continue;
            }
            out.push(DomainSummary {
                architecture,
                domain,
                quantity: q.into(),
                n: v.len(),
                mean: math::mean(&v),
                std: (v.len() > 1).then(|| math::sample_std(&v)),
            });
        }
    }
    out
}

fn pairwise_tests(runs: &[RunRow], stats: &StatsConfig, warnings: &mut Vec<String>) -> Vec<PairwiseTest> {
    let archs: BTreeSet<Variant> = runs.iter().map(|r| r.architecture).collect();
    let archs: Vec<Variant> = archs.into_iter().collect();
    let keyed: BTreeMap<(Variant, &str, u64), &RunRow> = runs
        .iter()
        .map(|r| ((r.architecture, r.dataset.as_str(), r.seed), r))
        .collect();
    let mut tests = Vec::new();
    for metric in METRICS {
        for (i, &a) in archs.iter().enumerate() {
            for &b in &archs[i + 1..] {
                let diffs: Vec<f64> = keyed
                    .iter()
                    .filter(|((arch, _, _), _)| *arch == a)
                    .filter_map(|((_, ds, seed), ra)| {
                        let rb = keyed.get(&(b, *ds, *seed))?;
                        Some(ra.metric(metric)? - rb.metric(metric)?)
                    })
                    .collect();
                if diffs.len() < 2 {
                    warnings.push(format!(
                        "{metric}: {} vs {} has {} paired runs, test skipped",
                        a.name(),
                        b.name(),
                        diffs.len()
                    ));
                    continue;
                }
                let w = match wilcoxon_from_differences(&diffs) {
                    Ok(w) => w,
                    Err(e) => {
                        warnings.push(format!("{metric}: {} vs {}: {e}", a.name(), b.name()));
                        continue;
                    }
                };
                let d = cohens_d_from_differences(&diffs);
                tests.push(PairwiseTest {
                    metric: metric.into(),
                    architecture_a: a,
                    architecture_b: b,
                    n: diffs.len(),
                    mean_difference: math::mean(&diffs),
                    w_plus: w.w_plus,
                    exact: w.exact,
                    zeros_dropped: w.zeros_dropped,
                    p_raw: w.p,
                    p_adjusted: w.p,
                    significant: false,
                    cohens_d: finite(d.d),
                    d_degenerate: d.degenerate,
                });
            }
        }
    }
    let families: Vec<Vec<usize>> = match stats.correction {
        CorrectionFamily::Global => vec![(0..tests.len()).collect()],
        CorrectionFamily::PerMetric => METRICS
            .iter()
            .map(|m| (0..tests.len()).filter(|&i| tests[i].metric == *m).collect())
            .collect(),
    };
    for family in families.into_iter().filter(|f| !f.is_empty()) {
        let p: Vec<f64> = family.iter().map(|&i| tests[i].p_raw).collect();
        if let Ok((adj, reject)) = holm_sidak(&p, stats.alpha) {
            for (k, &i) in family.iter().enumerate() {
                tests[i].p_adjusted = adj[k];
                tests[i].significant = reject[k];
            }
        }
    }
    tests
}

fn mean_of(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| math::mean(values))
}

/// Seed-averaged CES per (architecture, latent dimension) for each dataset,
/// and seed-averaged mediation ratios per (group, layer) for each
/// (dataset, architecture).
fn heatmaps(manifests: &[&RunManifest]) -> Vec<Heatmap> {
    let mut by_dataset: BTreeMap<&str, Vec<&RunManifest>> = BTreeMap::new();
    for m in manifests.iter().filter(|m| m.is_completed()) {
        by_dataset.entry(m.run_id.dataset.as_str()).or_default().push(m);
    }
    let mut out = Vec::new();
    for (dataset, ms) in by_dataset {
        let archs: BTreeSet<Variant> = ms.iter().map(|m| m.run_id.architecture).collect();
        let dims = ms
            .iter()
            .filter_map(|m| m.outputs.as_ref())
            .map(|o| o.metrics.ces_per_dim.len())
            .max()
            .unwrap_or(0);
        let mut rows = Vec::new();
        for &a in &archs {
            let runs: Vec<_> = ms
                .iter()
                .filter(|m| m.run_id.architecture == a)
                .filter_map(|m| m.outputs.as_ref())
                .collect();
            rows.push(
                (0..dims)
                    .map(|d| {
                        let v: Vec<f64> = runs.iter().filter_map(|o| o.metrics.ces_per_dim.get(d).copied()).collect();
                        mean_of(&v)
                    })
                    .collect(),
            );
        }
        out.push(Heatmap {
            name: format!("ces_{dataset}"),
            row_labels: archs.iter().map(|a| a.name().to_string()).collect(),
            col_labels: (0..dims).map(|d| format!("z{d}")).collect(),
            values: rows,
        });

        for &a in &archs {
            let runs: Vec<_> = ms
                .iter()
                .filter(|m| m.run_id.architecture == a)
                .filter_map(|m| m.outputs.as_ref())
                .collect();
            let Some(first) = runs.first() else { continue };
            let groups = first.group_names.clone();
            let layers = first.mediation.mr.first().map_or(0, Vec::len);
            let values = (0..groups.len())
                .map(|g| {
                    (0..layers)
                        .map(|l| {
                            let v: Vec<f64> = runs
                                .iter()
                                .filter_map(|o| o.mediation.mr.get(g).and_then(|r| r.get(l)).copied().flatten())
                                .collect();
                            mean_of(&v)
                        })
                        .collect()
                })
                .collect();
            out.push(Heatmap {
                name: format!("mediation_{dataset}_{}", a.name()),
                row_labels: groups,
                col_labels: (0..layers).map(|l| format!("layer{l}")).collect(),
                values,
            });
        }
    }
    out
}
