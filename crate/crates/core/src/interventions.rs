//! Four-level causal interventions on a trained VAE: input-group
//! perturbation (Level 1), latent sweeps (Level 2), activation patching
//! (Level 3) and layer-wise mediation (Level 4).
//!
//! Latent sweeps take only a feature matrix, never a partition, so their
//! outputs cannot depend on how features are grouped.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::Partition;
use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::tensor::Matrix;
use crate::vae::TrainedModel;

/// Perturbation scales for Level 1.
pub const DEFAULT_SCALES: [f64; 3] = [0.5, 1.0, 2.0];
/// Number of sweep points per latent dimension.
pub const DEFAULT_SWEEP_POINTS: usize = 51;
/// Half-width of the sweep, in units of the sweep scale.
pub const DEFAULT_SWEEP_RANGE: f64 = 3.0;
/// Raw mediation ratios further than this outside [0, 1] count as violations.
pub const NIS_TOLERANCE: f64 = 1e-9;
/// Samples whose total effect is below this are skipped in mediation.
pub const MIN_TOTAL_EFFECT: f64 = 1e-12;

/// Rows per decoder call during sweeps.
const SWEEP_CHUNK: usize = 2048;

/// Adds `scale * sigma[j]` to every feature `j` of `group`.
pub fn perturb_group(x: &Matrix, group: &[usize], scale: f64, sigma: &[f64]) -> Result<Matrix> {
    check_dim("sigma length", x.cols(), sigma.len())?;
    if let Some(&bad) = group.iter().find(|&&j| j >= x.cols()) {
        return Err(Error::Config(format!("feature {bad} out of range")));
    }
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for &j in group {
            row[j] += scale * sigma[j];
        }
    }
    Ok(out)
}

/// Level-1 responses of the posterior mean to group perturbations.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImportanceMatrix {
    /// G×D mean absolute shift of each latent mean, averaged over scales.
    pub r: Matrix,
    pub scales: Vec<f64>,
    /// G×S mean Euclidean norm of the latent-mean shift.
    pub delta: Matrix,
    /// Per group, R² of the line fitted to (scale, delta), including the
    /// zero-response point at scale 0.
    pub linearity_r2: Vec<f64>,
}

impl ImportanceMatrix {
    pub fn group_count(&self) -> usize {
        self.r.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.r.cols()
    }
}

/// R² of an ordinary least-squares line with intercept. A constant response
/// is fitted perfectly and gets 1.
pub fn linear_fit_r2(x: &[f64], y: &[f64]) -> f64 {
    let mx = math::mean(x);
    let my = math::mean(y);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    if syy <= 0.0 {
        return 1.0;
    }
    if sxx <= 0.0 {
        return 0.0;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let e = b - (intercept + slope * a);
            e * e
        })
        .sum();
    (1.0 - ss_res / syy).clamp(0.0, 1.0)
}

pub fn level1_scan(
    model: &TrainedModel,
    x: &Matrix,
    partition: &Partition,
    sigma: &[f64],
    scales: &[f64],
) -> Result<ImportanceMatrix> {
    if x.rows() == 0 {
        return Err(Error::Config("empty evaluation set".into()));
    }
    if scales.is_empty() {
        return Err(Error::Config("at least one perturbation scale is required".into()));
    }
    check_dim("partition coverage", x.cols(), partition.feature_count())?;
    let base = model.encode_mean(x)?;
    let g_count = partition.group_count();
    let d_count = model.latent_dim();
    let n = x.rows() as f64;
    let mut r = Matrix::zeros(g_count, d_count);
    let mut delta = Matrix::zeros(g_count, scales.len());
    let mut linearity_r2 = Vec::with_capacity(g_count);
    for (g, members) in partition.groups.iter().enumerate() {
        for (si, &s) in scales.iter().enumerate() {
            let shifted = model.encode_mean(&perturb_group(x, members, s, sigma)?)?;
            let mut norm_sum = 0.0;
            let mut abs_sum = vec![0.0; d_count];
            for i in 0..x.rows() {
                let mut sq = 0.0;
                for (d, (a, b)) in shifted.row(i).iter().zip(base.row(i)).enumerate() {
                    let diff = a - b;
                    sq += diff * diff;
                    abs_sum[d] += diff.abs();
                }
                norm_sum += math::sqrt(sq);
            }
            delta.set(g, si, norm_sum / n);
            for d in 0..d_count {
                let cur = r.get(g, d);
                r.set(g, d, cur + abs_sum[d] / n / scales.len() as f64);
            }
        }
        let mut xs = vec![0.0];
        xs.extend_from_slice(scales);
        let mut ys = vec![0.0];
        ys.extend((0..scales.len()).map(|si| delta.get(g, si)));
        linearity_r2.push(linear_fit_r2(&xs, &ys));
    }
    Ok(ImportanceMatrix {
        r,
        scales: scales.to_vec(),
        delta,
        linearity_r2,
    })
}

/// Spread of the posterior over an evaluation set.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PosteriorStats {
    pub mu_mean: Vec<f64>,
    /// Population standard deviation of each latent mean.
    pub mu_std: Vec<f64>,
    pub mean_logvar: Vec<f64>,
    /// `max(mu_std, sqrt(exp(mean_logvar)))` per dimension.
    pub sigma_eff: Vec<f64>,
}

impl PosteriorStats {
    pub fn from_moments(mu: &Matrix, logvar: &Matrix) -> Result<Self> {
        if mu.rows() < 2 {
            return Err(Error::Config("posterior statistics need at least 2 samples".into()));
        }
        check_dim("logvar rows", mu.rows(), logvar.rows())?;
        check_dim("logvar cols", mu.cols(), logvar.cols())?;
        let mu_mean = mu.col_means();
        let mu_std = mu.col_stds();
        let mean_logvar = logvar.col_means();
        let sigma_eff = mu_std
            .iter()
            .zip(&mean_logvar)
            .map(|(s, lv)| s.max(math::sqrt(math::exp(*lv))))
            .collect();
        Ok(Self {
            mu_mean,
            mu_std,
            mean_logvar,
            sigma_eff,
        })
    }
}

pub fn posterior_stats(model: &TrainedModel, x: &Matrix) -> Result<PosteriorStats> {
    let (mu, logvar) = model.encode_batch(x)?;
    PosteriorStats::from_moments(&mu, &logvar)
}

/// Where a calibrated sweep is centred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SweepCenter {
    /// Dataset mean of the swept latent mean.
    #[default]
    GlobalMean,
    /// Each sample's own latent mean.
    PerSample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SweepConfig {
    pub n_points: usize,
    pub range: f64,
    pub center: SweepCenter,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_points: DEFAULT_SWEEP_POINTS,
            range: DEFAULT_SWEEP_RANGE,
            center: SweepCenter::GlobalMean,
        }
    }
}

/// Output of a sweep over every latent dimension.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepEffects {
    /// Per dimension: mean over samples and sweep points of the per-feature
    /// mean absolute output change.
    pub ces: Vec<f64>,
    /// D×n mean absolute change of each output feature.
    pub effects: Matrix,
}

enum SweepKind<'a> {
    Calibrated(&'a PosteriorStats, SweepCenter),
    Fixed,
}

fn sweep(model: &TrainedModel, x: &Matrix, kind: SweepKind<'_>, n_points: usize, range: f64) -> Result<SweepEffects> {
    if x.rows() == 0 {
        return Err(Error::Config("empty evaluation set".into()));
    }
    if n_points == 0 {
        return Err(Error::Config("sweep needs at least one point".into()));
    }
    let d_count = model.latent_dim();
    if let SweepKind::Calibrated(stats, _) = &kind {
        check_dim("posterior stats", d_count, stats.sigma_eff.len())?;
    }
    let mu = model.encode_mean(x)?;
    let baseline = model.decode_batch(&mu)?;
    let n_out = baseline.cols();
    let ts = math::linspace(-range, range, n_points);
    let total = (x.rows() * n_points) as f64;
    let mut effects = Matrix::zeros(d_count, n_out);
    let mut ces = vec![0.0; d_count];
    let samples_per_chunk = (SWEEP_CHUNK / n_points).max(1);
    for d in 0..d_count {
        let mut acc = vec![0.0; n_out];
        let mut start = 0;
        while start < x.rows() {
            let end = (start + samples_per_chunk).min(x.rows());
            let mut z = Matrix::zeros((end - start) * n_points, d_count);
            for i in start..end {
                let center = match kind {
                    SweepKind::Calibrated(stats, SweepCenter::GlobalMean) => stats.mu_mean[d],
                    SweepKind::Calibrated(_, SweepCenter::PerSample) => mu.get(i, d),
                    SweepKind::Fixed => 0.0,
                };
                let step = match kind {
                    SweepKind::Calibrated(stats, _) => stats.sigma_eff[d],
                    SweepKind::Fixed => 1.0,
                };
                for (k, t) in ts.iter().enumerate() {
                    let row = z.row_mut((i - start) * n_points + k);
                    row.copy_from_slice(mu.row(i));
                    row[d] = center + step * t;
                }
            }
            let out = model.decode_batch(&z)?;
            for i in start..end {
                let base = baseline.row(i);
                for k in 0..n_points {
                    for (a, (o, b)) in acc.iter_mut().zip(out.row((i - start) * n_points + k).iter().zip(base)) {
                        *a += (o - b).abs();
                    }
                }
            }
            start = end;
        }
        for (j, a) in acc.iter().enumerate() {
            effects.set(d, j, a / total);
        }
        ces[d] = math::mean(effects.row(d));
    }
    Ok(SweepEffects { ces, effects })
}

/// Posterior-calibrated sweep: `z_d = center + sigma_eff_d * t`, `t` in
/// `[-range, range]`, other coordinates at the sample's latent mean.
pub fn calibrated_sweep(model: &TrainedModel, x: &Matrix, stats: &PosteriorStats, config: &SweepConfig) -> Result<SweepEffects> {
    sweep(model, x, SweepKind::Calibrated(stats, config.center), config.n_points, config.range)
}

/// Fixed-range sweep: `z_d = t`, `t` in `[-range, range]`.
pub fn fixed_sweep(model: &TrainedModel, x: &Matrix, config: &SweepConfig) -> Result<SweepEffects> {
    sweep(model, x, SweepKind::Fixed, config.n_points, config.range)
}

/// Calibrated causal effect strength of one latent dimension.
pub fn ces_calibrated(model: &TrainedModel, x: &Matrix, stats: &PosteriorStats, d: usize, config: &SweepConfig) -> Result<f64> {
    if d >= model.latent_dim() {
        return Err(Error::Config(format!("latent dimension {d} out of range")));
    }
    Ok(calibrated_sweep(model, x, stats, config)?.ces[d])
}

/// Fixed-range causal effect strength of one latent dimension.
pub fn ces_fixed(model: &TrainedModel, x: &Matrix, d: usize, config: &SweepConfig) -> Result<f64> {
    if d >= model.latent_dim() {
        return Err(Error::Config(format!("latent dimension {d} out of range")));
    }
    Ok(fixed_sweep(model, x, config)?.ces[d])
}

/// Latent-mean shift from substituting the source's activation at one layer.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PatchingProfile {
    pub compound: Vec<f64>,
    pub direct: Vec<f64>,
}

/// Per-pair `||mu_patched(l) - mu(target)||` for hidden layer `layer`.
pub fn patch_compound_batch(model: &TrainedModel, sources: &Matrix, targets: &Matrix, layer: usize) -> Result<Vec<f64>> {
    check_dim("source/target pairs", sources.rows(), targets.rows())?;
    if layer >= model.hidden_layer_count() {
        return Err(Error::Config(format!("layer {layer} is not a hidden layer")));
    }
    let src = model.encoder_trace(sources)?;
    let mu_t = model.encode_mean(targets)?;
    let patched = model.mu_from_hidden(layer, src.post(layer))?;
    Ok(row_distances(&patched, &mu_t))
}

pub fn patch_compound(model: &TrainedModel, source: &[f64], target: &[f64], layer: usize) -> Result<f64> {
    Ok(patch_compound_batch(model, &Matrix::row_vector(source), &Matrix::row_vector(target), layer)?[0])
}

/// `direct(l) = compound(l) - compound(l + 1)` with `compound(L) = 0`.
pub fn patch_direct(compound: &[f64]) -> Vec<f64> {
    (0..compound.len())
        .map(|l| compound[l] - compound.get(l + 1).copied().unwrap_or(0.0))
        .collect()
}

/// Compound and direct effects for every pair and hidden layer.
pub fn patching_profiles(model: &TrainedModel, sources: &Matrix, targets: &Matrix) -> Result<Vec<PatchingProfile>> {
    let layers = model.hidden_layer_count();
    let mut per_layer = Vec::with_capacity(layers);
    for l in 0..layers {
        per_layer.push(patch_compound_batch(model, sources, targets, l)?);
    }
    Ok((0..sources.rows())
        .map(|i| {
            let compound: Vec<f64> = per_layer.iter().map(|c| c[i]).collect();
            PatchingProfile {
                direct: patch_direct(&compound),
                compound,
            }
        })
        .collect())
}

/// Pair-averaged profile.
pub fn mean_profile(profiles: &[PatchingProfile]) -> Option<PatchingProfile> {
    let first = profiles.first()?;
    let n = profiles.len() as f64;
    let layers = first.compound.len();
    let compound: Vec<f64> = (0..layers)
        .map(|l| profiles.iter().map(|p| p.compound[l]).sum::<f64>() / n)
        .collect();
    Some(PatchingProfile {
        direct: patch_direct(&compound),
        compound,
    })
}

fn row_distances(a: &Matrix, b: &Matrix) -> Vec<f64> {
    (0..a.rows())
        .map(|i| {
            let sq: f64 = a.row(i).iter().zip(b.row(i)).map(|(p, q)| (p - q) * (p - q)).sum();
            math::sqrt(sq)
        })
        .collect()
}

/// Level-4 mediation ratios per (group, hidden layer).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MediationGrid {
    /// Clamped ratios; `None` where every sample had a negligible total effect.
    pub mr: Vec<Vec<Option<f64>>>,
    pub raw_mr: Vec<Vec<Option<f64>>>,
    /// Mean total effect per group over the retained samples.
    pub total_effect: Vec<f64>,
    pub raw_violations: usize,
    /// `raw_violations / (G * L)`.
    pub nis: f64,
    pub undefined_cells: Vec<(usize, usize)>,
    pub skipped_samples: Vec<usize>,
}

pub fn mediation_scan(model: &TrainedModel, x: &Matrix, partition: &Partition, sigma: &[f64], scale: f64) -> Result<MediationGrid> {
    if x.rows() == 0 {
        return Err(Error::Config("empty evaluation set".into()));
    }
    check_dim("partition coverage", x.cols(), partition.feature_count())?;
    let layers = model.hidden_layer_count();
    let g_count = partition.group_count();
    let clean_trace = model.encoder_trace(x)?;
    let mu_clean = model.encode_mean(x)?;
    let mut mr = vec![vec![None; layers]; g_count];
    let mut raw_mr = vec![vec![None; layers]; g_count];
    let mut total_effect = vec![0.0; g_count];
    let mut skipped_samples = vec![0; g_count];
    let mut undefined_cells = Vec::new();
    let mut raw_violations = 0;
    for (g, members) in partition.groups.iter().enumerate() {
        let perturbed = perturb_group(x, members, scale, sigma)?;
        let te = row_distances(&model.encode_mean(&perturbed)?, &mu_clean);
        let keep: Vec<usize> = (0..x.rows()).filter(|&i| te[i] >= MIN_TOTAL_EFFECT).collect();
        skipped_samples[g] = x.rows() - keep.len();
        if keep.is_empty() {
            undefined_cells.extend((0..layers).map(|l| (g, l)));
            continue;
        }
        let te_mean = keep.iter().map(|&i| te[i]).sum::<f64>() / keep.len() as f64;
        total_effect[g] = te_mean;
        for l in 0..layers {
            // Layer l's output is pinned to its clean value; everything
            // downstream of it sees only that.
            let frozen = model.mu_from_hidden(l, clean_trace.post(l))?;
            let re = row_distances(&frozen, &mu_clean);
            let re_mean = keep.iter().map(|&i| re[i]).sum::<f64>() / keep.len() as f64;
            let raw = (te_mean - re_mean) / te_mean;
            if !(-NIS_TOLERANCE..=1.0 + NIS_TOLERANCE).contains(&raw) {
                raw_violations += 1;
            }
            raw_mr[g][l] = Some(raw);
            mr[g][l] = Some(raw.clamp(0.0, 1.0));
        }
    }
    let cells = (g_count * layers).max(1);
    Ok(MediationGrid {
        mr,
        raw_mr,
        total_effect,
        raw_violations,
        nis: raw_violations as f64 / cells as f64,
        undefined_cells,
        skipped_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Activation, DenseLayer};
    use crate::vae::{VaeArchitectureSpec, Variant};

    /// Model whose encoder is one identity layer followed by a `mu` head
    /// with weights `w`, and whose decoder is a single linear layer `dec`.
    pub(crate) fn linear_model(w: Matrix, dec: Matrix) -> TrainedModel {
        let (d, n) = (w.rows(), w.cols());
        let spec = VaeArchitectureSpec::new(Variant::Standard, n, vec![n], d);
        let mut m = TrainedModel::init(spec, 0).unwrap();
        m.encoder = vec![DenseLayer::new(Matrix::identity(n), vec![0.0; n], Activation::Identity).unwrap()];
        m.mu_head = DenseLayer::new(w, vec![0.0; d], Activation::Identity).unwrap();
        m.logvar_head = DenseLayer::zeros(n, d, Activation::Identity);
        let out = dec.rows();
        m.decoder = vec![DenseLayer::new(dec, vec![0.0; out], Activation::Identity).unwrap()];
        m
    }

    #[test]
    fn perturb_cases() {
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        let sigma = [2.0, 1.0, 1.0];
        assert_eq!(perturb_group(&x, &[0, 1], 0.0, &sigma).unwrap(), x);
        let y = perturb_group(&x, &[0], 1.0, &sigma).unwrap();
        assert_eq!(y.row(0), &[3.0, 2.0, 3.0]);
        let z = perturb_group(&x, &[2], 1.5, &sigma).unwrap();
        assert_eq!(z.row(0)[..2].iter().map(|v| v.to_bits()).collect::<Vec<_>>(), [1.0f64.to_bits(), 2.0f64.to_bits()]);
    }

    #[test]
    fn dead_group_has_zero_row() {
        let w = Matrix::from_rows(&[[1.0, 0.0], [2.0, 0.0]]).unwrap();
        let m = linear_model(w, Matrix::identity(2));
        let x = Matrix::from_rows(&[[0.3, -1.0], [1.0, 2.0]]).unwrap();
        let p = Partition::singletons(2);
        let imp = level1_scan(&m, &x, &p, &[1.0, 1.0], &DEFAULT_SCALES).unwrap();
        assert_eq!(imp.r.row(1), &[0.0, 0.0]);
        assert!(imp.delta.row(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_encoder_is_exactly_linear() {
        let w = Matrix::from_rows(&[[1.0, -0.5], [0.25, 3.0]]).unwrap();
        let m = linear_model(w, Matrix::identity(2));
        let x = Matrix::from_rows(&[[0.3, -1.0], [1.0, 2.0], [0.0, 0.1]]).unwrap();
        let p = Partition::singletons(2);
        let sigma = [0.7, 1.3];
        let imp = level1_scan(&m, &x, &p, &sigma, &DEFAULT_SCALES).unwrap();
        assert_eq!(imp.linearity_r2, vec![1.0, 1.0]);
        // R[g, d] = |W[d, g]| * sigma_g * mean(scales)
        let ms = DEFAULT_SCALES.iter().sum::<f64>() / 3.0;
        let expect = [[1.0 * 0.7 * ms, 0.25 * 0.7 * ms], [0.5 * 1.3 * ms, 3.0 * 1.3 * ms]];
        for g in 0..2 {
            for d in 0..2 {
                assert!((imp.r.get(g, d) - expect[g][d]).abs() < 1e-12);
            }
            for (si, s) in DEFAULT_SCALES.iter().enumerate() {
                let ratio = imp.delta.get(g, si) / s;
                assert!((ratio - imp.delta.get(g, 1)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn posterior_stats_examples() {
        let mu = Matrix::from_rows(&[[5.0, -2.0, 1.0], [5.0, 2.0, 1.0]]).unwrap();
        let lv = Matrix::from_rows(&[[0.0, math::ln(0.01), math::ln(9.0)], [0.0, math::ln(0.01), math::ln(9.0)]]).unwrap();
        let s = PosteriorStats::from_moments(&mu, &lv).unwrap();
        assert_eq!(s.sigma_eff[0], 1.0);
        assert!((s.sigma_eff[1] - 2.0).abs() < 1e-12);
        assert!((s.sigma_eff[2] - 3.0).abs() < 1e-12);
    }

    fn stats_1d(mean: f64, sigma: f64) -> PosteriorStats {
        PosteriorStats {
            mu_mean: vec![mean],
            mu_std: vec![sigma],
            mean_logvar: vec![0.0],
            sigma_eff: vec![sigma],
        }
    }

    #[test]
    fn identity_decoder_sweep_value() {
        let m = linear_model(Matrix::identity(1), Matrix::identity(1));
        let x = Matrix::from_rows(&[[0.0]]).unwrap();
        let cfg = SweepConfig::default();
        let expected = 78.0 / 51.0;
        let cal = ces_calibrated(&m, &x, &stats_1d(0.0, 1.0), 0, &cfg).unwrap();
        let fixed = ces_fixed(&m, &x, 0, &cfg).unwrap();
        assert!((cal - expected).abs() < 1e-12);
        assert!((fixed - expected).abs() < 1e-12);
        let doubled = ces_calibrated(&m, &x, &stats_1d(0.0, 2.0), 0, &cfg).unwrap();
        assert!((doubled - 2.0 * cal).abs() < 1e-12);
    }

    #[test]
    fn zero_jacobian_dimension_has_zero_ces() {
        let dec = Matrix::from_rows(&[[1.0, 0.0], [2.0, 0.0]]).unwrap();
        let m = linear_model(Matrix::identity(2), dec);
        let x = Matrix::from_rows(&[[0.5, 1.0], [-0.5, 0.0]]).unwrap();
        let sweep = fixed_sweep(&m, &x, &SweepConfig::default()).unwrap();
        assert_eq!(sweep.ces[1], 0.0);
        assert!(sweep.ces[0] > 0.0);
        assert!(sweep.effects.row(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn telescoping_examples() {
        assert_eq!(patch_direct(&[5.0, 3.0, 1.0]), vec![2.0, 2.0, 1.0]);
        assert_eq!(patch_direct(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn self_patch_is_zero() {
        let spec = VaeArchitectureSpec::new(Variant::Standard, 4, vec![6, 5], 2);
        let m = TrainedModel::init(spec, 9).unwrap();
        let x = [0.1, -0.3, 2.0, 0.5];
        for l in 0..2 {
            assert_eq!(patch_compound(&m, &x, &x, l).unwrap(), 0.0);
        }
    }

    #[test]
    fn last_layer_patch_matches_head() {
        let spec = VaeArchitectureSpec::new(Variant::Standard, 3, vec![4], 2);
        let m = TrainedModel::init(spec, 5).unwrap();
        let s = [1.0, -2.0, 0.5];
        let t = [0.0, 0.3, -1.0];
        let hs = m.encoder[0].apply(&Matrix::row_vector(&s)).unwrap();
        let ht = m.encoder[0].apply(&Matrix::row_vector(&t)).unwrap();
        let w = &m.mu_head.weight;
        let mut sq = 0.0;
        for d in 0..2 {
            let v: f64 = (0..4).map(|k| w.get(d, k) * (hs.get(0, k) - ht.get(0, k))).sum();
            sq += v * v;
        }
        assert!((patch_compound(&m, &s, &t, 0).unwrap() - math::sqrt(sq)).abs() < 1e-12);
    }

    #[test]
    fn freezing_blocks_everything_in_sequential_nets() {
        let spec = VaeArchitectureSpec::new(Variant::Standard, 4, vec![8, 6], 3);
        let m = TrainedModel::init(spec, 1).unwrap();
        let mut rng = crate::rng::SeededRng::new(2);
        let x = Matrix::from_vec(10, 4, rng.normal_vec(40)).unwrap();
        let p = Partition::new(alloc::vec!["a".into(), "b".into()], alloc::vec![alloc::vec![0, 1], alloc::vec![2, 3]]).unwrap();
        let grid = mediation_scan(&m, &x, &p, &[1.0; 4], 1.0).unwrap();
        assert_eq!(grid.nis, 0.0);
        for row in &grid.mr {
            for v in row {
                assert_eq!(*v, Some(1.0));
            }
        }
        let none = mediation_scan(&m, &x, &p, &[1.0; 4], 0.0).unwrap();
        assert_eq!(none.undefined_cells.len(), 4);
        assert_eq!(none.skipped_samples, vec![10, 10]);
    }

    #[test]
    fn r2_conventions() {
        assert_eq!(linear_fit_r2(&[0.0, 1.0, 2.0], &[0.0, 0.0, 0.0]), 1.0);
        assert!(linear_fit_r2(&[0.0, 1.0, 2.0, 3.0], &[0.0, 1.0, 0.0, 1.0]) < 0.5);
    }
}
