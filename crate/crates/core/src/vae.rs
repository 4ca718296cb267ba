//! Fully-connected VAEs with five regularisation variants and their trainer.
//!
//! All variants share one backbone: a ReLU encoder trunk feeding two linear
//! heads (`mu`, `logvar`) and a mirrored ReLU decoder with a linear output.
//! Reconstruction error is the per-sample sum of squared errors, averaged over
//! the batch; the reported MSE is the per-element mean.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::adam::AdamState;
use crate::error::{check_dim, Error, Result};
use crate::math;
use crate::rng::SeededRng;
use crate::tensor::{self, Activation, DenseLayer, ForwardCache, LayerGrads, Matrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Stream tags for [`SeededRng::derive`].
const STREAM_INIT: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_EVAL: u64 = 3;
const STREAM_TRAIN: u64 = 4;

/// Hidden width of the FactorVAE discriminator.
pub const DISCRIMINATOR_WIDTH: usize = 64;
/// Hidden depth of the FactorVAE discriminator.
pub const DISCRIMINATOR_DEPTH: usize = 3;
/// Initialisation recorded in run manifests.
pub const INIT_SCHEME: &str = "kaiming_uniform(a=sqrt(5)) fan_in, bias U(-1/sqrt(fan_in), 1/sqrt(fan_in))";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Variant {
    Standard,
    Beta,
    BetaTc,
    Factor,
    #[cfg_attr(feature = "serde", serde(rename = "dip_ii"))]
    DipII,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Standard,
        Variant::Beta,
        Variant::BetaTc,
        Variant::Factor,
        Variant::DipII,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::Beta => "beta",
            Variant::BetaTc => "beta_tc",
            Variant::Factor => "factor",
            Variant::DipII => "dip_ii",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    pub fn tag(self) -> u8 {
        match self {
            Variant::Standard => 0,
            Variant::Beta => 1,
            Variant::BetaTc => 2,
            Variant::Factor => 3,
            Variant::DipII => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.tag() == tag)
    }
}

/// Variant hyperparameters; only the ones a variant uses are read.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct Hyper {
    /// KL weight of the β-VAE.
    pub beta: f64,
    /// Total-correlation weight of the β-TC-VAE.
    pub tc_weight: f64,
    /// Adversarial TC weight of the FactorVAE.
    pub gamma: f64,
    /// DIP-VAE-II off-diagonal covariance weight.
    pub lambda_od: f64,
    /// DIP-VAE-II diagonal covariance weight.
    pub lambda_d: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            beta: 4.0,
            tc_weight: 6.0,
            gamma: 10.0,
            lambda_od: 10.0,
            lambda_d: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VaeArchitectureSpec {
    pub variant: Variant,
    pub input_dim: usize,
    pub encoder_widths: Vec<usize>,
    pub latent_dim: usize,
    pub hyper: Hyper,
}

impl VaeArchitectureSpec {
    pub fn new(variant: Variant, input_dim: usize, encoder_widths: Vec<usize>, latent_dim: usize) -> Self {
        Self {
            variant,
            input_dim,
            encoder_widths,
            latent_dim,
            hyper: Hyper::default(),
        }
    }

    pub fn with_hyper(mut self, hyper: Hyper) -> Self {
        self.hyper = hyper;
        self
    }

    pub fn decoder_widths(&self) -> Vec<usize> {
        self.encoder_widths.iter().rev().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be at least 1".into()));
        }
        if self.encoder_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub early_stop_patience: usize,
    /// Fraction of rows held out for early stopping and the final MSE.
    pub holdout_fraction: f64,
    pub discriminator_lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            batch_size: 256,
            lr: 1e-3,
            plateau_patience: 10,
            plateau_factor: 0.5,
            early_stop_patience: 20,
            holdout_fraction: 0.1,
            discriminator_lr: 1e-4,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config("training counts must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.discriminator_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::Config("plateau_factor must lie in (0, 1)".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config("holdout_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// A trained (or freshly initialised) VAE.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainedModel {
    pub spec: VaeArchitectureSpec,
    pub encoder: Vec<DenseLayer>,
    pub mu_head: DenseLayer,
    pub logvar_head: DenseLayer,
    pub decoder: Vec<DenseLayer>,
    /// FactorVAE only.
    pub discriminator: Option<Vec<DenseLayer>>,
    pub seed: u64,
    pub final_mse: f64,
    pub epochs_run: usize,
    pub converged: bool,
}

/// Gradients for every generator parameter.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub encoder: Vec<LayerGrads>,
    pub mu_head: LayerGrads,
    pub logvar_head: LayerGrads,
    pub decoder: Vec<LayerGrads>,
}

impl ModelGrads {
    pub fn all(&self) -> Vec<&LayerGrads> {
        let mut v: Vec<&LayerGrads> = self.encoder.iter().collect();
        v.push(&self.mu_head);
        v.push(&self.logvar_head);
        v.extend(self.decoder.iter());
        v
    }
}

/// Batch-mean loss and its parts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub total: f64,
    /// Per-element reconstruction MSE.
    pub recon_mse: f64,
    /// Analytic KL to the standard normal prior, batch mean.
    pub kl: f64,
    pub regularizer: RegularizerTerms,
}

/// Variant-specific regulariser values (unused entries stay zero).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegularizerTerms {
    pub mutual_info: f64,
    pub total_correlation: f64,
    pub dimwise_kl: f64,
    pub discriminator_tc: f64,
    pub dip_penalty: f64,
}

impl TrainedModel {
    /// Freshly initialised model; the discriminator exists only for FactorVAE.
    pub fn init(spec: VaeArchitectureSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = SeededRng::new(seed).derive(STREAM_INIT);
        let mut encoder = Vec::new();
        let mut width = spec.input_dim;
        for &w in &spec.encoder_widths {
            encoder.push(DenseLayer::kaiming_uniform(width, w, Activation::Relu, &mut rng));
            width = w;
        }
        let mu_head = DenseLayer::kaiming_uniform(width, spec.latent_dim, Activation::Identity, &mut rng);
        let logvar_head =
            DenseLayer::kaiming_uniform(width, spec.latent_dim, Activation::Identity, &mut rng);
        let mut decoder = Vec::new();
        let mut width = spec.latent_dim;
        for w in spec.decoder_widths() {
            decoder.push(DenseLayer::kaiming_uniform(width, w, Activation::Relu, &mut rng));
            width = w;
        }
        decoder.push(DenseLayer::kaiming_uniform(
            width,
            spec.input_dim,
            Activation::Identity,
            &mut rng,
        ));
        let discriminator = (spec.variant == Variant::Factor)
            .then(|| init_discriminator(spec.latent_dim, &mut rng));
        Ok(Self {
            spec,
            encoder,
            mu_head,
            logvar_head,
            decoder,
            discriminator,
            seed,
            final_mse: 0.0,
            epochs_run: 0,
            converged: false,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    /// Number of hidden encoder layers (the patchable layers).
    pub fn hidden_layer_count(&self) -> usize {
        self.encoder.len()
    }

    pub fn encode_batch(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        check_dim("encoder input", self.input_dim(), x.cols())?;
        let h = tensor::predict(&self.encoder, x)?;
        Ok((self.mu_head.apply(&h)?, self.logvar_head.apply(&h)?))
    }

    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (mu, logvar) = self.encode_batch(&Matrix::row_vector(x))?;
        Ok((mu.into_data(), logvar.into_data()))
    }

    /// Posterior means only.
    pub fn encode_mean(&self, x: &Matrix) -> Result<Matrix> {
        check_dim("encoder input", self.input_dim(), x.cols())?;
        let h = tensor::predict(&self.encoder, x)?;
        self.mu_head.apply(&h)
    }

    /// Encoder trunk forward pass with every hidden activation cached.
    pub fn encoder_trace(&self, x: &Matrix) -> Result<ForwardCache> {
        check_dim("encoder input", self.input_dim(), x.cols())?;
        Ok(tensor::forward_batch(&self.encoder, x)?.1)
    }

    /// Posterior means obtained by feeding `hidden` as the output of hidden
    /// layer `layer` and running the remaining layers and the `mu` head.
    pub fn mu_from_hidden(&self, layer: usize, hidden: &Matrix) -> Result<Matrix> {
        if layer >= self.encoder.len() {
            return Err(Error::Config(format!(
                "layer {layer} out of range for {} hidden layers",
                self.encoder.len()
            )));
        }
        let h = tensor::predict(&self.encoder[layer + 1..], hidden)?;
        self.mu_head.apply(&h)
    }

    pub fn decode_batch(&self, z: &Matrix) -> Result<Matrix> {
        check_dim("decoder input", self.latent_dim(), z.cols())?;
        tensor::predict(&self.decoder, z)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.decode_batch(&Matrix::row_vector(z))?.into_data())
    }

    /// Reconstruction from the posterior mean.
    pub fn reconstruct(&self, x: &Matrix) -> Result<Matrix> {
        self.decode_batch(&self.encode_mean(x)?)
    }

    /// Per-element mean squared reconstruction error through `mu`.
    pub fn reconstruction_mse(&self, x: &Matrix) -> Result<f64> {
        let recon = self.reconstruct(x)?;
        let n = x.data().len();
        if n == 0 {
            return Err(Error::Config("empty evaluation set".into()));
        }
        let sse: f64 = recon
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sse / n as f64)
    }

    fn generator_layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        let mut v: Vec<&mut DenseLayer> = self.encoder.iter_mut().collect();
        v.push(&mut self.mu_head);
        v.push(&mut self.logvar_head);
        v.extend(self.decoder.iter_mut());
        v
    }

    fn generator_param_count(&self) -> usize {
        self.encoder.iter().map(DenseLayer::param_count).sum::<usize>()
            + self.mu_head.param_count()
            + self.logvar_head.param_count()
            + self.decoder.iter().map(DenseLayer::param_count).sum::<usize>()
    }
}

fn init_discriminator(latent_dim: usize, rng: &mut SeededRng) -> Vec<DenseLayer> {
    let mut layers = Vec::with_capacity(DISCRIMINATOR_DEPTH + 1);
    let mut width = latent_dim;
    for _ in 0..DISCRIMINATOR_DEPTH {
        layers.push(DenseLayer::kaiming_uniform(
            width,
            DISCRIMINATOR_WIDTH,
            Activation::Relu,
            rng,
        ));
        width = DISCRIMINATOR_WIDTH;
    }
    // Zero output layer: the untrained discriminator reports chance.
    layers.push(DenseLayer::zeros(width, 2, Activation::Identity));
    layers
}

/// `z = mu + exp(logvar / 2) * eps`.
pub fn reparameterize(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    check_dim("reparameterize logvar", mu.len(), logvar.len())?;
    check_dim("reparameterize eps", mu.len(), eps.len())?;
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + math::exp(0.5 * lv) * e)
        .collect())
}

/// `KL(N(mu, diag(exp(logvar))) || N(0, I))`.
pub fn kl_to_standard_normal(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + math::exp(*lv) - lv - 1.0))
        .sum()
}

/// Per-sample terms of the minibatch-weighted-sampling estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct MwsTerms {
    /// `log q(z_i | x_i)`.
    pub log_qz_given_x: Vec<f64>,
    /// `log q(z_i)`.
    pub log_qz: Vec<f64>,
    /// `sum_d log q(z_id)`.
    pub log_qz_product: Vec<f64>,
    /// `log p(z_i)`.
    pub log_pz: Vec<f64>,
}

#[inline]
fn gaussian_log_density(z: f64, mu: f64, logvar: f64) -> f64 {
    let diff = z - mu;
    -0.5 * (LN_2PI + logvar + diff * diff * math::exp(-logvar))
}

/// Minibatch-weighted sampling estimates for a batch of samples `z` drawn
/// from posteriors `(mu, logvar)`, with `dataset_size` training rows.
pub fn mws_terms(z: &Matrix, mu: &Matrix, logvar: &Matrix, dataset_size: usize) -> Result<MwsTerms> {
    check_dim("mws mu rows", z.rows(), mu.rows())?;
    check_dim("mws logvar rows", z.rows(), logvar.rows())?;
    check_dim("mws mu cols", z.cols(), mu.cols())?;
    check_dim("mws logvar cols", z.cols(), logvar.cols())?;
    let m = z.rows();
    let d = z.cols();
    let log_nm = math::ln((dataset_size.max(1) * m) as f64);
    let mut terms = MwsTerms {
        log_qz_given_x: vec![0.0; m],
        log_qz: vec![0.0; m],
        log_qz_product: vec![0.0; m],
        log_pz: vec![0.0; m],
    };
    let mut joint = vec![0.0; m];
    let mut per_dim = vec![0.0; m];
    let mut dens = vec![0.0; m * d];
    for i in 0..m {
        let zi = z.row(i);
        for j in 0..m {
            let (mj, lj) = (mu.row(j), logvar.row(j));
            for k in 0..d {
                dens[j * d + k] = gaussian_log_density(zi[k], mj[k], lj[k]);
            }
            joint[j] = dens[j * d..(j + 1) * d].iter().sum();
        }
        terms.log_qz_given_x[i] = joint[i];
        terms.log_qz[i] = math::log_sum_exp(&joint) - log_nm;
        let mut prod = 0.0;
        for k in 0..d {
            for j in 0..m {
                per_dim[j] = dens[j * d + k];
            }
            prod += math::log_sum_exp(&per_dim) - log_nm;
        }
        terms.log_qz_product[i] = prod;
        terms.log_pz[i] = zi.iter().map(|v| -0.5 * (LN_2PI + v * v)).sum();
    }
    Ok(terms)
}

struct PenaltyGrad {
    value: f64,
    dz: Matrix,
    dmu: Matrix,
    dlogvar: Matrix,
}

/// β-TC penalty `mean_i [log q(z|x) - log p(z) + (w - 1)(log q(z) - sum_d log q(z_d))]`
/// with gradients, plus the three decomposition terms.
fn beta_tc_penalty(
    z: &Matrix,
    mu: &Matrix,
    logvar: &Matrix,
    dataset_size: usize,
    tc_weight: f64,
) -> Result<(PenaltyGrad, RegularizerTerms)> {
    let m = z.rows();
    let d = z.cols();
    let terms = mws_terms(z, mu, logvar, dataset_size)?;
    let inv_m = 1.0 / m as f64;
    let mut reg = RegularizerTerms::default();
    let mut value = 0.0;
    for i in 0..m {
        let mi = terms.log_qz_given_x[i] - terms.log_qz[i];
        let tc = terms.log_qz[i] - terms.log_qz_product[i];
        let dw = terms.log_qz_product[i] - terms.log_pz[i];
        reg.mutual_info += mi * inv_m;
        reg.total_correlation += tc * inv_m;
        reg.dimwise_kl += dw * inv_m;
        value += (mi + tc_weight * tc + dw) * inv_m;
    }

    let mut dz = Matrix::zeros(m, d);
    let mut dmu = Matrix::zeros(m, d);
    let mut dlogvar = Matrix::zeros(m, d);
    let a = tc_weight - 1.0;
    let mut dens = vec![0.0; m * d];
    let mut joint = vec![0.0; m];
    let mut col = vec![0.0; m];
    for i in 0..m {
        let zi = z.row(i);
        for j in 0..m {
            let (mj, lj) = (mu.row(j), logvar.row(j));
            for k in 0..d {
                dens[j * d + k] = gaussian_log_density(zi[k], mj[k], lj[k]);
            }
            joint[j] = dens[j * d..(j + 1) * d].iter().sum();
        }
        let lse = math::log_sum_exp(&joint);
        // softmax over j of the joint log densities
        let p: Vec<f64> = joint.iter().map(|v| math::exp(v - lse)).collect();
        for k in 0..d {
            for j in 0..m {
                col[j] = dens[j * d + k];
            }
            let lse_k = math::log_sum_exp(&col);
            for j in 0..m {
                let r = math::exp(col[j] - lse_k);
                let delta = if i == j { 1.0 } else { 0.0 };
                let c = inv_m * (delta + a * p[j] - a * r);
                if c == 0.0 {
                    continue;
                }
                let inv_var = math::exp(-logvar.get(j, k));
                let diff = zi[k] - mu.get(j, k);
                let g = dz.get(i, k) - c * diff * inv_var;
                dz.set(i, k, g);
                let g = dmu.get(j, k) + c * diff * inv_var;
                dmu.set(j, k, g);
                let g = dlogvar.get(j, k) - c * 0.5 * (1.0 - diff * diff * inv_var);
                dlogvar.set(j, k, g);
            }
        }
        for k in 0..d {
            // -log p(z) contributes z / m
            let g = dz.get(i, k) + inv_m * zi[k];
            dz.set(i, k, g);
        }
    }
    Ok((
        PenaltyGrad {
            value,
            dz,
            dmu,
            dlogvar,
        },
        reg,
    ))
}

/// DIP-VAE-II penalty on the aggregate posterior covariance
/// `Cov(mu) + mean(diag(exp(logvar)))`.
fn dip_ii_penalty(mu: &Matrix, logvar: &Matrix, lambda_od: f64, lambda_d: f64) -> PenaltyGrad {
    let m = mu.rows();
    let d = mu.cols();
    let inv_m = 1.0 / m as f64;
    let means = mu.col_means();
    let mut cov = Matrix::zeros(d, d);
    for row in mu.row_iter() {
        for a in 0..d {
            let da = row[a] - means[a];
            for b in 0..d {
                let v = cov.get(a, b) + da * (row[b] - means[b]) * inv_m;
                cov.set(a, b, v);
            }
        }
    }
    for row in logvar.row_iter() {
        for a in 0..d {
            let v = cov.get(a, a) + math::exp(row[a]) * inv_m;
            cov.set(a, a, v);
        }
    }
    let mut value = 0.0;
    let mut grad_cov = Matrix::zeros(d, d);
    for a in 0..d {
        for b in 0..d {
            let c = cov.get(a, b);
            if a == b {
                value += lambda_d * (c - 1.0) * (c - 1.0);
                grad_cov.set(a, b, 2.0 * lambda_d * (c - 1.0));
            } else {
                value += lambda_od * c * c;
                grad_cov.set(a, b, 2.0 * lambda_od * c);
            }
        }
    }
    let mut dmu = Matrix::zeros(m, d);
    let mut dlogvar = Matrix::zeros(m, d);
    for s in 0..m {
        let row = mu.row(s);
        for a in 0..d {
            let mut g = 0.0;
            for b in 0..d {
                g += grad_cov.get(a, b) * (row[b] - means[b]);
            }
            dmu.set(s, a, 2.0 * inv_m * g);
            dlogvar.set(s, a, grad_cov.get(a, a) * math::exp(logvar.get(s, a)) * inv_m);
        }
    }
    PenaltyGrad {
        value,
        dz: Matrix::zeros(m, d),
        dmu,
        dlogvar,
    }
}

/// Loss (and optionally gradients) of one batch given the noise `eps` used in
/// the reparameterisation. `dataset_size` feeds the β-TC estimator.
pub fn loss_and_grads(
    model: &TrainedModel,
    batch: &Matrix,
    eps: &Matrix,
    dataset_size: usize,
    want_grads: bool,
) -> Result<(LossBreakdown, Option<ModelGrads>)> {
    let spec = &model.spec;
    let m = batch.rows();
    let dim = spec.latent_dim;
    if m == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    if m < 2 && matches!(spec.variant, Variant::BetaTc | Variant::DipII) {
        return Err(Error::Config(format!(
            "{} loss needs a batch of at least 2 rows",
            spec.variant.name()
        )));
    }
    check_dim("loss input width", spec.input_dim, batch.cols())?;
    check_dim("eps rows", m, eps.rows())?;
    check_dim("eps cols", dim, eps.cols())?;

    let (h, trunk_cache) = tensor::forward_batch(&model.encoder, batch)?;
    let (mu_pre, mu) = model.mu_head.forward_batch(&h)?;
    let (lv_pre, logvar) = model.logvar_head.forward_batch(&h)?;
    let mut z = Matrix::zeros(m, dim);
    for s in 0..m {
        for k in 0..dim {
            z.set(
                s,
                k,
                mu.get(s, k) + math::exp(0.5 * logvar.get(s, k)) * eps.get(s, k),
            );
        }
    }
    let (recon, dec_cache) = tensor::forward_batch(&model.decoder, &z)?;

    let inv_m = 1.0 / m as f64;
    let sse: f64 = recon
        .data()
        .iter()
        .zip(batch.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let recon_term = sse * inv_m;
    let kl_mean: f64 = (0..m)
        .map(|s| kl_to_standard_normal(mu.row(s), logvar.row(s)))
        .sum::<f64>()
        * inv_m;

    let mut breakdown = LossBreakdown {
        recon_mse: sse / batch.data().len() as f64,
        kl: kl_mean,
        ..LossBreakdown::default()
    };

    // KL weight applied analytically; β-TC replaces it with the sampled estimator.
    let kl_weight = match spec.variant {
        Variant::Beta => spec.hyper.beta,
        Variant::BetaTc => 0.0,
        _ => 1.0,
    };
    let mut total = recon_term + kl_weight * kl_mean;
    let mut penalty: Option<PenaltyGrad> = None;
    let mut disc_cache: Option<ForwardCache> = None;
    match spec.variant {
        Variant::Standard | Variant::Beta => {}
        Variant::BetaTc => {
            let (p, reg) = beta_tc_penalty(&z, &mu, &logvar, dataset_size, spec.hyper.tc_weight)?;
            total += p.value;
            breakdown.regularizer = reg;
            penalty = Some(p);
        }
        Variant::Factor => {
            let disc = model
                .discriminator
                .as_ref()
                .ok_or_else(|| Error::Logic("FactorVAE model without discriminator".into()))?;
            let (logits, cache) = tensor::forward_batch(disc, &z)?;
            let tc: f64 = (0..m)
                .map(|s| logits.get(s, 0) - logits.get(s, 1))
                .sum::<f64>()
                * inv_m;
            breakdown.regularizer.discriminator_tc = tc;
            total += spec.hyper.gamma * tc;
            disc_cache = Some(cache);
        }
        Variant::DipII => {
            let p = dip_ii_penalty(&mu, &logvar, spec.hyper.lambda_od, spec.hyper.lambda_d);
            breakdown.regularizer.dip_penalty = p.value;
            total += p.value;
            penalty = Some(p);
        }
    }
    breakdown.total = total;
    if !total.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    if !want_grads {
        return Ok((breakdown, None));
    }

    // Reconstruction gradient.
    let mut d_recon = Matrix::zeros(m, spec.input_dim);
    for (g, (a, b)) in d_recon
        .data_mut()
        .iter_mut()
        .zip(recon.data().iter().zip(batch.data()))
    {
        *g = 2.0 * (a - b) * inv_m;
    }
    let (decoder_grads, mut dz) = tensor::backward(&model.decoder, &dec_cache, &d_recon)?;

    let mut dmu = Matrix::zeros(m, dim);
    let mut dlogvar = Matrix::zeros(m, dim);
    if let Some(cache) = &disc_cache {
        let disc = model.discriminator.as_ref().expect("checked above");
        let mut g = Matrix::zeros(m, 2);
        let scale = spec.hyper.gamma * inv_m;
        for s in 0..m {
            g.set(s, 0, scale);
            g.set(s, 1, -scale);
        }
        let (_, dz_disc) = tensor::backward(disc, cache, &g)?;
        for (a, b) in dz.data_mut().iter_mut().zip(dz_disc.data()) {
            *a += b;
        }
    }
    if let Some(p) = &penalty {
        for (a, b) in dz.data_mut().iter_mut().zip(p.dz.data()) {
            *a += b;
        }
        for (a, b) in dmu.data_mut().iter_mut().zip(p.dmu.data()) {
            *a += b;
        }
        for (a, b) in dlogvar.data_mut().iter_mut().zip(p.dlogvar.data()) {
            *a += b;
        }
    }
    for s in 0..m {
        for k in 0..dim {
            let (mu_v, lv) = (mu.get(s, k), logvar.get(s, k));
            let sigma = math::exp(0.5 * lv);
            let g_z = dz.get(s, k);
            let g_mu = dmu.get(s, k) + g_z + kl_weight * mu_v * inv_m;
            let g_lv = dlogvar.get(s, k)
                + g_z * eps.get(s, k) * 0.5 * sigma
                + kl_weight * 0.5 * (math::exp(lv) - 1.0) * inv_m;
            dmu.set(s, k, g_mu);
            dlogvar.set(s, k, g_lv);
        }
    }
    let (mu_grads, dh_mu) = model.mu_head.backward_batch(&h, &mu_pre, &dmu)?;
    let (lv_grads, dh_lv) = model.logvar_head.backward_batch(&h, &lv_pre, &dlogvar)?;
    let mut dh = dh_mu;
    for (a, b) in dh.data_mut().iter_mut().zip(dh_lv.data()) {
        *a += b;
    }
    let (encoder_grads, _) = tensor::backward(&model.encoder, &trunk_cache, &dh)?;
    Ok((
        breakdown,
        Some(ModelGrads {
            encoder: encoder_grads,
            mu_head: mu_grads,
            logvar_head: lv_grads,
            decoder: decoder_grads,
        }),
    ))
}

/// Variant loss on a batch, drawing reparameterisation noise from `rng`.
pub fn compute_loss(
    model: &TrainedModel,
    batch: &Matrix,
    dataset_size: usize,
    rng: &mut SeededRng,
) -> Result<LossBreakdown> {
    let eps = Matrix::from_vec(
        batch.rows(),
        model.latent_dim(),
        rng.normal_vec(batch.rows() * model.latent_dim()),
    )?;
    Ok(loss_and_grads(model, batch, &eps, dataset_size, false)?.0)
}

/// Permutes every latent dimension independently across the batch.
pub fn permute_latents(z: &Matrix, rng: &mut SeededRng) -> Matrix {
    let mut out = z.clone();
    for k in 0..z.cols() {
        let perm = rng.permutation(z.rows());
        for (dst, &src) in perm.iter().enumerate() {
            out.set(dst, k, z.get(src, k));
        }
    }
    out
}

/// One discriminator update on latent samples `z` (class 0) against their
/// dimension-wise permutation (class 1). Returns the cross-entropy before the
/// update, averaged over both classes.
pub fn discriminator_step_on_latents(
    discriminator: &mut [DenseLayer],
    optimizer: &mut AdamState,
    z: &Matrix,
    rng: &mut SeededRng,
) -> Result<f64> {
    let permuted = permute_latents(z, rng);
    let m = z.rows();
    if m == 0 {
        return Err(Error::Config("empty latent batch".into()));
    }
    let mut total_loss = 0.0;
    let mut accum: Option<Vec<LayerGrads>> = None;
    for (inputs, class) in [(z, 0usize), (&permuted, 1usize)] {
        let (logits, cache) = tensor::forward_batch(discriminator, inputs)?;
        let mut g = Matrix::zeros(m, 2);
        for s in 0..m {
            let l = logits.row(s);
            let lse = math::log_sum_exp(l);
            total_loss += (lse - l[class]) / (2 * m) as f64;
            for c in 0..2 {
                let p = math::exp(l[c] - lse);
                let target = if c == class { 1.0 } else { 0.0 };
                g.set(s, c, (p - target) / (2 * m) as f64);
            }
        }
        let (grads, _) = tensor::backward(discriminator, &cache, &g)?;
        match &mut accum {
            None => accum = Some(grads),
            Some(acc) => acc.iter_mut().zip(&grads).for_each(|(a, b)| a.add_assign(b)),
        }
    }
    let grads = accum.expect("two passes ran");
    let grad_refs: Vec<&LayerGrads> = grads.iter().collect();
    let mut layers: Vec<&mut DenseLayer> = discriminator.iter_mut().collect();
    optimizer.step_layers(&mut layers, &grad_refs)?;
    Ok(total_loss)
}

/// Fresh optimizer for a FactorVAE discriminator.
pub fn discriminator_optimizer(model: &TrainedModel, lr: f64) -> Result<AdamState> {
    let disc = model
        .discriminator
        .as_ref()
        .ok_or_else(|| Error::Logic("model has no discriminator".into()))?;
    let refs: Vec<&DenseLayer> = disc.iter().collect();
    Ok(AdamState::for_layers(&refs, lr))
}

/// Encodes `batch`, samples latents and takes one discriminator step.
pub fn factorvae_discriminator_step(
    model: &mut TrainedModel,
    optimizer: &mut AdamState,
    batch: &Matrix,
    rng: &mut SeededRng,
) -> Result<f64> {
    if model.spec.variant != Variant::Factor {
        return Err(Error::Logic(format!(
            "discriminator step on a {} model",
            model.spec.variant.name()
        )));
    }
    let (mu, logvar) = model.encode_batch(batch)?;
    let mut z = mu.clone();
    for s in 0..z.rows() {
        for k in 0..z.cols() {
            let v = mu.get(s, k) + math::exp(0.5 * logvar.get(s, k)) * rng.standard_normal();
            z.set(s, k, v);
        }
    }
    let disc = model
        .discriminator
        .as_mut()
        .ok_or_else(|| Error::Logic("FactorVAE model without discriminator".into()))?;
    discriminator_step_on_latents(disc, optimizer, &z, rng)
}

/// Deterministic train / held-out row split.
pub fn holdout_split(n_rows: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = SeededRng::new(seed).derive(STREAM_SPLIT);
    let perm = rng.permutation(n_rows);
    let mut n_hold = math::floor(n_rows as f64 * fraction + 0.5) as usize;
    if n_rows >= 4 {
        n_hold = n_hold.clamp(2, n_rows - 2);
    } else {
        n_hold = n_hold.min(n_rows / 2);
    }
    let mut hold = perm[..n_hold].to_vec();
    let mut train = perm[n_hold..].to_vec();
    hold.sort_unstable();
    train.sort_unstable();
    (train, hold)
}

/// Per-epoch record of the training loop.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout_loss: f64,
    pub holdout_mse: f64,
    pub lr: f64,
}

/// Trains a model on the rows of `data` (already preprocessed).
pub fn train(spec: &VaeArchitectureSpec, data: &Matrix, config: &TrainConfig) -> Result<TrainedModel> {
    Ok(train_with_history(spec, data, config)?.0)
}

/// [`train`], also returning the per-epoch history.
pub fn train_with_history(
    spec: &VaeArchitectureSpec,
    data: &Matrix,
    config: &TrainConfig,
) -> Result<(TrainedModel, Vec<EpochRecord>)> {
    spec.validate()?;
    config.validate()?;
    check_dim("training data width", spec.input_dim, data.cols())?;
    if data.rows() < 4 {
        return Err(Error::Config("training needs at least 4 rows".into()));
    }
    let mut model = TrainedModel::init(spec.clone(), config.seed)?;
    let root = SeededRng::new(config.seed);
    let (train_rows, hold_rows) = holdout_split(data.rows(), config.holdout_fraction, config.seed);
    let holdout = data.select_rows(&hold_rows);
    let eval_eps = {
        let mut r = root.derive(STREAM_EVAL);
        Matrix::from_vec(
            holdout.rows(),
            spec.latent_dim,
            r.normal_vec(holdout.rows() * spec.latent_dim),
        )?
    };
    let mut rng = root.derive(STREAM_TRAIN);
    let mut optimizer = AdamState::new(model.generator_param_count(), config.lr);
    let mut disc_optimizer = if spec.variant == Variant::Factor {
        Some(discriminator_optimizer(&model, config.discriminator_lr)?)
    } else {
        None
    };
    let n_train = train_rows.len();
    let mut order = train_rows.clone();
    let mut history = Vec::new();

    let mut best_plateau = f64::INFINITY;
    let mut bad_epochs = 0usize;
    let mut best_loss = f64::INFINITY;
    let mut best_model: Option<TrainedModel> = None;
    let mut since_best = 0usize;
    let mut converged = false;
    let mut epochs_run = 0usize;

    for epoch in 0..config.max_epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let batch = data.select_rows(chunk);
            let eps = Matrix::from_vec(
                chunk.len(),
                spec.latent_dim,
                rng.normal_vec(chunk.len() * spec.latent_dim),
            )?;
            let (loss, grads) = loss_and_grads(&model, &batch, &eps, n_train, true)?;
            let grads = grads.expect("requested");
            {
                let grad_refs = grads.all();
                let mut layers = model.generator_layers_mut();
                optimizer.step_layers(&mut layers, &grad_refs)?;
            }
            if let Some(opt) = disc_optimizer.as_mut() {
                // Latents of this batch under the updated encoder, detached.
                let (mu, logvar) = {
                    let (h, _) = tensor::forward_batch(&model.encoder, &batch)?;
                    (model.mu_head.apply(&h)?, model.logvar_head.apply(&h)?)
                };
                let mut z = mu.clone();
                for (i, v) in z.data_mut().iter_mut().enumerate() {
                    *v = mu.data()[i] + math::exp(0.5 * logvar.data()[i]) * eps.data()[i];
                }
                let disc = model.discriminator.as_mut().expect("FactorVAE");
                discriminator_step_on_latents(disc, opt, &z, &mut rng)?;
            }
            epoch_loss += loss.total;
            batches += 1;
        }
        epochs_run = epoch + 1;
        let (hold_loss, _) = loss_and_grads(&model, &holdout, &eval_eps, n_train, false)?;
        let monitored = hold_loss.total;
        if !monitored.is_finite() {
            return Err(Error::NonFinite(format!("held-out loss at epoch {epoch}")));
        }
        history.push(EpochRecord {
            epoch,
            train_loss: if batches > 0 { epoch_loss / batches as f64 } else { f64::NAN },
            holdout_loss: monitored,
            holdout_mse: hold_loss.recon_mse,
            lr: optimizer.lr,
        });

        // Plateau schedule with a relative improvement threshold of 1e-4.
        if monitored < best_plateau * (1.0 - 1e-4) {
            best_plateau = monitored;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > config.plateau_patience {
                optimizer.lr *= config.plateau_factor;
                bad_epochs = 0;
            }
        }
        if monitored < best_loss {
            best_loss = monitored;
            best_model = Some(model.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.early_stop_patience {
                converged = true;
                break;
            }
        }
    }
    if let Some(best) = best_model {
        model = best;
    }
    model.epochs_run = epochs_run;
    model.converged = converged;
    model.final_mse = model.reconstruction_mse(&holdout)?;
    Ok((model, history))
}

/// Short human-readable description, used in logs.
pub fn describe(spec: &VaeArchitectureSpec) -> String {
    format!(
        "{} {}->{:?}->{}",
        spec.variant.name(),
        spec.input_dim,
        spec.encoder_widths,
        spec.latent_dim
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reparameterize_cases() {
        assert_eq!(reparameterize(&[1.0, 2.0], &[0.3, 0.1], &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(reparameterize(&[1.0, 2.0], &[0.0, 0.0], &[1.0, 1.0]).unwrap(), vec![2.0, 3.0]);
        let z = reparameterize(&[0.5], &[math::ln(4.0)], &[1.5]).unwrap();
        assert!((z[0] - 3.5).abs() < 1e-14);
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_to_standard_normal(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(kl_to_standard_normal(&[1.0], &[0.0]), 0.5);
        let v = kl_to_standard_normal(&[0.0], &[math::ln(4.0)]);
        assert!((v - 0.5 * (4.0 - math::ln(4.0) - 1.0)).abs() < 1e-14);
        assert!((v - 0.8069).abs() < 1e-4);
    }

    #[test]
    fn zero_network_encodes_to_zero() {
        let spec = VaeArchitectureSpec::new(Variant::Standard, 3, vec![4, 2], 2);
        let mut model = TrainedModel::init(spec, 1).unwrap();
        for l in model.generator_layers_mut() {
            l.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
            l.bias.iter_mut().for_each(|v| *v = 0.0);
        }
        let (mu, lv) = model.encode(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(mu, vec![0.0, 0.0]);
        assert_eq!(lv, vec![0.0, 0.0]);
    }

    #[test]
    fn small_batches_rejected_for_batch_statistics() {
        for variant in [Variant::BetaTc, Variant::DipII] {
            let spec = VaeArchitectureSpec::new(variant, 2, vec![3], 2);
            let model = TrainedModel::init(spec, 0).unwrap();
            let x = Matrix::from_rows(&[[0.1, 0.2]]).unwrap();
            let mut rng = SeededRng::new(0);
            assert!(matches!(compute_loss(&model, &x, 10, &mut rng), Err(Error::Config(_))));
        }
    }

    #[test]
    fn discriminator_step_rejects_other_variants() {
        let spec = VaeArchitectureSpec::new(Variant::Beta, 2, vec![3], 2);
        let mut model = TrainedModel::init(spec, 0).unwrap();
        let mut opt = AdamState::new(1, 1e-4);
        let x = Matrix::from_rows(&[[0.1, 0.2], [0.3, 0.4]]).unwrap();
        let err = factorvae_discriminator_step(&mut model, &mut opt, &x, &mut SeededRng::new(1));
        assert!(matches!(err, Err(Error::Logic(_))));
    }

    #[test]
    fn holdout_split_is_a_partition() {
        let (train, hold) = holdout_split(100, 0.1, 42);
        assert_eq!(hold.len(), 10);
        assert_eq!(train.len(), 90);
        let mut all: Vec<usize> = train.iter().chain(&hold).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(holdout_split(100, 0.1, 42), (train, hold));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()), Some(v));
            assert_eq!(Variant::from_tag(v.tag()), Some(v));
        }
    }
}
