//! Logistic-regression probe on latent means and its downstream measures.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::rng::SeededRng;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ProbeConfig {
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the gradient norm falls below this.
    pub tolerance: f64,
    pub test_fraction: f64,
    /// Noise standard deviation in units of each latent's standard deviation.
    pub noise_sd: f64,
    pub noise_draws: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            max_iter: 5000,
            tolerance: 1e-6,
            test_fraction: 0.3,
            noise_sd: 0.5,
            noise_draws: 10,
        }
    }
}

/// L2-regularised logistic regression on standardised inputs.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LogisticProbe {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticProbe {
    pub fn logit(&self, row: &[f64]) -> f64 {
        self.bias
            + row
                .iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .zip(&self.weights)
                .map(|(((x, m), s), w)| w * (x - m) / s)
                .sum::<f64>()
    }

    pub fn probabilities(&self, x: &Matrix) -> Vec<f64> {
        x.row_iter().map(|r| math::sigmoid(self.logit(r))).collect()
    }

    pub fn predict(&self, x: &Matrix) -> Vec<bool> {
        x.row_iter().map(|r| self.logit(r) > 0.0).collect()
    }
}

fn both_classes(labels: &[bool]) -> Result<()> {
    if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
        return Err(Error::Undefined("labels contain a single class".into()));
    }
    Ok(())
}

/// Full-batch gradient descent with step `1/L`, `L` an upper bound on the
/// loss curvature.
pub fn fit_logistic(x: &Matrix, labels: &[bool], config: &ProbeConfig) -> Result<LogisticProbe> {
    check_dim("probe labels", x.rows(), labels.len())?;
    both_classes(labels)?;
    let n = x.rows();
    let d = x.cols();
    let mean = x.col_means();
    let scale: Vec<f64> = x.col_stds().into_iter().map(|s| if s > 0.0 { s } else { 1.0 }).collect();
    let mut z = x.clone();
    for r in 0..n {
        for (j, v) in z.row_mut(r).iter_mut().enumerate() {
            *v = (*v - mean[j]) / scale[j];
        }
    }
    let frob: f64 = z.data().iter().map(|v| v * v).sum::<f64>() / n as f64;
    let lipschitz = 0.25 * (frob + 1.0) + config.l2;
    let step = 1.0 / lipschitz;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_w = vec![0.0; d];
    while iterations < config.max_iter {
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = z.row(r);
            let logit = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let err = math::sigmoid(logit) - if y { 1.0 } else { 0.0 };
            grad_b += err;
            for (g, a) in grad_w.iter_mut().zip(row) {
                *g += err * a;
            }
        }
        grad_b /= n as f64;
        for (g, wj) in grad_w.iter_mut().zip(&w) {
            *g = *g / n as f64 + config.l2 * wj;
        }
        let norm = math::sqrt(grad_b * grad_b + grad_w.iter().map(|g| g * g).sum::<f64>());
        if norm < config.tolerance {
            converged = true;
            break;
        }
        b -= step * grad_b;
        for (wj, g) in w.iter_mut().zip(&grad_w) {
            *wj -= step * g;
        }
        iterations += 1;
    }
    Ok(LogisticProbe {
        mean,
        scale,
        weights: w,
        bias: b,
        iterations,
        converged,
    })
}

/// Rank-based area under the ROC curve; tied scores count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_dim("auc labels", scores.len(), labels.len())?;
    both_classes(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = mid;
        }
        i = j + 1;
    }
    let n_pos = labels.iter().filter(|&&y| y).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y).map(|(r, _)| r).sum();
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

pub fn accuracy(predictions: &[bool], labels: &[bool]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    predictions.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64
}

/// Mean accuracy when Gaussian noise with standard deviation
/// `noise_sd * latent_std[j]` is added to every latent coordinate.
pub fn robustness(
    probe: &LogisticProbe,
    x: &Matrix,
    labels: &[bool],
    latent_std: &[f64],
    noise_sd: f64,
    n_draws: usize,
    rng: &mut SeededRng,
) -> Result<f64> {
    check_dim("robustness labels", x.rows(), labels.len())?;
    check_dim("latent std", x.cols(), latent_std.len())?;
    if n_draws == 0 {
        return Err(Error::Config("robustness needs at least one draw".into()));
    }
    let mut total = 0.0;
    for _ in 0..n_draws {
        let mut noisy = x.clone();
        for r in 0..noisy.rows() {
            for (v, s) in noisy.row_mut(r).iter_mut().zip(latent_std) {
                *v += noise_sd * s * rng.standard_normal();
            }
        }
        total += accuracy(&probe.predict(&noisy), labels);
    }
    Ok(total / n_draws as f64)
}

/// `|P(yhat = 1 | A = 0) - P(yhat = 1 | A = 1)|`.
pub fn dp_gap(predictions: &[bool], protected: &[bool]) -> Result<f64> {
    check_dim("protected attribute", predictions.len(), protected.len())?;
    let rate = |group: bool| -> Option<f64> {
        let members: Vec<bool> = predictions
            .iter()
            .zip(protected)
            .filter(|(_, &a)| a == group)
            .map(|(p, _)| *p)
            .collect();
        (!members.is_empty())
            .then(|| members.iter().filter(|&&p| p).count() as f64 / members.len() as f64)
    };
    match (rate(false), rate(true)) {
        (Some(a), Some(b)) => Ok((a - b).abs()),
        _ => Err(Error::Undefined("one protected group is absent".into())),
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeResult {
    pub accuracy: f64,
    pub auc: f64,
    pub robustness: f64,
    /// Missing when the test split lacks one protected group.
    pub dp_gap: Option<f64>,
    pub probe: LogisticProbe,
    pub train_rows: usize,
    pub test_rows: usize,
}

/// Shuffled train/test split by seed.
pub fn probe_split(n: usize, test_fraction: f64, rng: &mut SeededRng) -> (Vec<usize>, Vec<usize>) {
    let perm = rng.permutation(n);
    let n_test = (math::round(n as f64 * test_fraction) as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

/// Fits on a train split of the latent means and scores the test split.
pub fn evaluate_probe(
    latents: &Matrix,
    labels: &[bool],
    protected: Option<&[bool]>,
    config: &ProbeConfig,
    rng: &mut SeededRng,
) -> Result<ProbeResult> {
    check_dim("probe labels", latents.rows(), labels.len())?;
    if latents.rows() < 4 {
        return Err(Error::Config("probe needs at least 4 rows".into()));
    }
    let (train, test) = probe_split(latents.rows(), config.test_fraction, rng);
    let pick = |v: &[bool], idx: &[usize]| -> Vec<bool> { idx.iter().map(|&i| v[i]).collect() };
    let x_train = latents.select_rows(&train);
    let x_test = latents.select_rows(&test);
    let y_train = pick(labels, &train);
    let y_test = pick(labels, &test);
    let probe = fit_logistic(&x_train, &y_train, config)?;
    let predictions = probe.predict(&x_test);
    let acc = accuracy(&predictions, &y_test);
    let auc_value = auc(&probe.probabilities(&x_test), &y_test)?;
    let std = x_train.col_stds();
    let rob = robustness(&probe, &x_test, &y_test, &std, config.noise_sd, config.noise_draws, rng)?;
    let dp = match protected {
        Some(a) => {
            check_dim("protected attribute", latents.rows(), a.len())?;
            dp_gap(&predictions, &pick(a, &test)).ok()
        }
        None => None,
    };
    Ok(ProbeResult {
        accuracy: acc,
        auc: auc_value,
        robustness: rob,
        dp_gap: dp,
        probe,
        train_rows: train.len(),
        test_rows: test.len(),
    })
}
