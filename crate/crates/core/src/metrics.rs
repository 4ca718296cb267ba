//! Circuit metrics computed from intervention outputs.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::{random_partition, Partition};
use crate::error::{Error, Result};
use crate::interventions::{level1_scan, ImportanceMatrix};
use crate::math;
use crate::rng::SeededRng;
use crate::tensor::Matrix;
use crate::vae::TrainedModel;

/// Entropy of column `d` over groups divided by `ln G`.
///
/// An all-zero column is maximally uninformative (1). With a single group
/// the entropy is 0 by convention.
fn normalized_column_entropy(r: &Matrix, d: usize) -> f64 {
    let col = r.column(d);
    match math::entropy_of_weights(&col) {
        None => 1.0,
        Some(_) if r.rows() < 2 => 0.0,
        Some(h) => (h / math::ln(r.rows() as f64)).clamp(0.0, 1.0),
    }
}

fn check_nonnegative(r: &Matrix) -> Result<()> {
    if r.data().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Config("importance matrix must be finite and non-negative".into()));
    }
    if r.rows() == 0 || r.cols() == 0 {
        return Err(Error::Config("importance matrix is empty".into()));
    }
    Ok(())
}

/// `1 - mean_d H(R[:, d]) / ln G` for a G×D importance matrix.
pub fn modularity(r: &Matrix) -> Result<f64> {
    check_nonnegative(r)?;
    if r.data().iter().all(|v| *v == 0.0) {
        log::warn!("modularity of an all-zero importance matrix is 0");
        return Ok(0.0);
    }
    let mean_h = (0..r.cols()).map(|d| normalized_column_entropy(r, d)).sum::<f64>() / r.cols() as f64;
    Ok((1.0 - mean_h).clamp(0.0, 1.0))
}

/// Responsiveness-weighted column concentration of a G×D importance matrix.
pub fn fgd(r: &Matrix) -> Result<f64> {
    check_nonnegative(r)?;
    let weights: Vec<f64> = (0..r.cols()).map(|d| r.column(d).iter().sum()).collect();
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        log::warn!("feature-group disentanglement of an all-zero importance matrix is 0");
        return Ok(0.0);
    }
    let score: f64 = (0..r.cols())
        .map(|d| weights[d] * (1.0 - normalized_column_entropy(r, d)))
        .sum();
    Ok((score / total).clamp(0.0, 1.0))
}

/// DCI completeness of an importance matrix indexed `[code][factor]`:
/// each factor's importance distribution over codes, scored as
/// `1 - H_base(codes)`, averaged with weights proportional to factor importance.
pub fn dci_completeness_raw(importance: &Matrix) -> Result<f64> {
    check_nonnegative(importance)?;
    let codes = importance.rows();
    let total: f64 = importance.data().iter().sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let mut out = 0.0;
    for k in 0..importance.cols() {
        let column = importance.column(k);
        let mass: f64 = column.iter().sum();
        if mass <= 0.0 {
            continue;
        }
        let mut h = 0.0;
        if codes > 1 {
            for v in &column {
                if *v > 0.0 {
                    let p = v / mass;
                    h -= p * math::ln(p) / math::ln(codes as f64);
                }
            }
        }
        out += (mass / total) * (1.0 - h);
    }
    Ok(out.clamp(0.0, 1.0))
}

/// DCI completeness of an importance matrix obtained from single-feature
/// groups (rows are features, columns latent dimensions).
pub fn dci_completeness(r: &Matrix, partition: &Partition) -> Result<f64> {
    if partition.groups.iter().any(|g| g.len() != 1) {
        return Err(Error::Logic("DCI completeness requires singleton groups".into()));
    }
    if partition.group_count() != r.rows() {
        return Err(Error::Dimension {
            context: "importance rows",
            expected: partition.group_count(),
            actual: r.rows(),
        });
    }
    dci_completeness_raw(r)
}

/// Per-dimension concentration of a D×n effect matrix over output features,
/// averaged with `weights` (usually per-dimension CES). A dimension with no
/// effect scores 0 and carries no weight.
pub fn specificity_from_effects(effects: &Matrix, weights: &[f64]) -> Result<f64> {
    if weights.len() != effects.rows() {
        return Err(Error::Dimension {
            context: "specificity weights",
            expected: effects.rows(),
            actual: weights.len(),
        });
    }
    let n = effects.cols();
    let mut num = 0.0;
    let mut den = 0.0;
    for d in 0..effects.rows() {
        let row = effects.row(d);
        let Some(h) = math::entropy_of_weights(row) else {
            continue;
        };
        let s = if n < 2 { 1.0 } else { 1.0 - h / math::ln(n as f64) };
        num += weights[d] * s.clamp(0.0, 1.0);
        den += weights[d];
    }
    if den <= 0.0 {
        return Ok(0.0);
    }
    Ok((num / den).clamp(0.0, 1.0))
}

/// Equal-frequency bin index of every value (at most `bins` bins).
/// Ties share a bin, so a variable with k distinct values gets at most k bins.
pub fn equal_frequency_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut thresholds: Vec<f64> = (1..bins).map(|k| sorted[k * n / bins]).collect();
    thresholds.dedup();
    values
        .iter()
        .map(|v| thresholds.partition_point(|t| t <= v))
        .collect()
}

fn discrete_entropy(a: &[usize]) -> f64 {
    let k = a.iter().copied().max().map_or(0, |m| m + 1);
    let mut counts = vec![0.0; k];
    for &v in a {
        counts[v] += 1.0;
    }
    math::entropy_of_weights(&counts).unwrap_or(0.0)
}

/// Plug-in mutual information (nats) between two discrete codes.
pub fn discrete_mutual_information(a: &[usize], b: &[usize]) -> f64 {
    let ka = a.iter().copied().max().map_or(0, |m| m + 1);
    let kb = b.iter().copied().max().map_or(0, |m| m + 1);
    let n = a.len() as f64;
    let mut joint = vec![0.0; ka * kb];
    let mut pa = vec![0.0; ka];
    let mut pb = vec![0.0; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1.0;
        pa[x] += 1.0;
        pb[y] += 1.0;
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let c = joint[x * kb + y];
            if c > 0.0 {
                mi += (c / n) * math::ln(c * n / (pa[x] * pb[y]));
            }
        }
    }
    mi.max(0.0)
}

pub const MIG_BINS: usize = 20;

/// Mutual information gap between latent means (N×D) and factors (N×K).
/// Constant factors are skipped; if every factor is constant the result is 0.
pub fn mig(latents: &Matrix, factors: &Matrix) -> Result<f64> {
    if latents.rows() != factors.rows() {
        return Err(Error::Dimension {
            context: "MIG rows",
            expected: latents.rows(),
            actual: factors.rows(),
        });
    }
    if latents.rows() < 2 || latents.cols() == 0 {
        return Err(Error::Config("MIG needs at least 2 rows and one latent".into()));
    }
    let z_bins: Vec<Vec<usize>> = (0..latents.cols())
        .map(|d| equal_frequency_bins(&latents.column(d), MIG_BINS))
        .collect();
    let mut total = 0.0;
    let mut used = 0usize;
    for k in 0..factors.cols() {
        let f = equal_frequency_bins(&factors.column(k), MIG_BINS);
        let h = discrete_entropy(&f);
        if h <= 0.0 {
            log::warn!("MIG: factor {k} is constant and skipped");
            continue;
        }
        let mut mis: Vec<f64> = z_bins.iter().map(|z| discrete_mutual_information(z, &f)).collect();
        mis.sort_by(|a, b| b.total_cmp(a));
        let second = mis.get(1).copied().unwrap_or(0.0);
        total += (mis[0] - second) / h;
        used += 1;
    }
    if used == 0 {
        log::warn!("MIG: every factor is constant");
        return Ok(0.0);
    }
    Ok(total / used as f64)
}

/// Metrics reported for one trained model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricSet {
    pub ces_mean: f64,
    pub ces_per_dim: Vec<f64>,
    pub specificity: f64,
    pub modularity: f64,
    pub fgd: f64,
    pub mig: f64,
    /// From single-feature groups; only for datasets with known factors.
    pub dci_completeness: Option<f64>,
}

impl MetricSet {
    pub fn in_bounds(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        unit(self.modularity)
            && unit(self.fgd)
            && unit(self.specificity)
            && self.mig >= 0.0
            && self.ces_per_dim.iter().all(|c| *c >= 0.0)
    }
}

/// Semantic versus size-preserving random groupings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationResult {
    pub semantic_modularity: f64,
    pub semantic_fgd: f64,
    pub random_modularity: Vec<f64>,
    pub random_fgd: Vec<f64>,
    pub random_modularity_mean: f64,
    pub random_fgd_mean: f64,
    pub modularity_gap: f64,
    pub fgd_gap: f64,
}

pub const DEFAULT_PERMUTATIONS: usize = 10;

/// Reruns the Level-1 scan under `n_perm` random regroupings.
pub fn grouping_ablation(
    model: &TrainedModel,
    x: &Matrix,
    partition: &Partition,
    sigma: &[f64],
    scales: &[f64],
    n_perm: usize,
    rng: &mut SeededRng,
) -> Result<AblationResult> {
    let semantic = level1_scan(model, x, partition, sigma, scales)?;
    ablation_from_semantic(model, x, partition, sigma, &semantic, n_perm, rng)
}

/// As [`grouping_ablation`], reusing an existing semantic scan.
pub fn ablation_from_semantic(
    model: &TrainedModel,
    x: &Matrix,
    partition: &Partition,
    sigma: &[f64],
    semantic: &ImportanceMatrix,
    n_perm: usize,
    rng: &mut SeededRng,
) -> Result<AblationResult> {
    let semantic_modularity = modularity(&semantic.r)?;
    let semantic_fgd = fgd(&semantic.r)?;
    let mut random_modularity = Vec::with_capacity(n_perm);
    let mut random_fgd = Vec::with_capacity(n_perm);
    for _ in 0..n_perm {
        let p = random_partition(partition, rng);
        let imp = level1_scan(model, x, &p, sigma, &semantic.scales)?;
        random_modularity.push(modularity(&imp.r)?);
        random_fgd.push(fgd(&imp.r)?);
    }
    let random_modularity_mean = if n_perm > 0 { math::mean(&random_modularity) } else { semantic_modularity };
    let random_fgd_mean = if n_perm > 0 { math::mean(&random_fgd) } else { semantic_fgd };
    Ok(AblationResult {
        semantic_modularity,
        semantic_fgd,
        random_modularity,
        random_fgd,
        random_modularity_mean,
        random_fgd_mean,
        modularity_gap: semantic_modularity - random_modularity_mean,
        fgd_gap: semantic_fgd - random_fgd_mean,
    })
}
