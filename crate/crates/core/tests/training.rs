//! Training loop contracts and the FactorVAE discriminator.

use circuitlab_core::rng::SeededRng;
use circuitlab_core::tensor::{Activation, Matrix};
use circuitlab_core::vae::{
    discriminator_optimizer, discriminator_step_on_latents, holdout_split, train, TrainConfig, TrainedModel,
    VaeArchitectureSpec, Variant,
};

fn gaussian_pair(n: usize, seed: u64) -> Matrix {
    let mut rng = SeededRng::new(seed);
    let mut data = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let a = rng.standard_normal();
        data.push(a);
        data.push(0.8 * a + 0.6 * rng.standard_normal());
    }
    Matrix::from_vec(n, 2, data).unwrap()
}

fn small_config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        seed,
        max_epochs: epochs,
        batch_size: 64,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_returns_the_initial_model() {
    let x = gaussian_pair(40, 1);
    let spec = VaeArchitectureSpec::new(Variant::Standard, 2, vec![4], 1);
    let m = train(&spec, &x, &small_config(5, 0)).unwrap();
    let init = TrainedModel::init(spec, 5).unwrap();
    assert_eq!(m.encoder, init.encoder);
    assert_eq!(m.epochs_run, 0);
    assert!(!m.converged);
}

#[test]
fn standard_vae_beats_the_mean_predictor() {
    let x = gaussian_pair(600, 2);
    let spec = VaeArchitectureSpec::new(Variant::Standard, 2, vec![16, 8], 2);
    let m = train(&spec, &x, &small_config(3, 150)).unwrap();
    let (_, hold) = holdout_split(600, 0.1, 3);
    let h = x.select_rows(&hold);
    let means = h.col_means();
    let baseline: f64 = h
        .row_iter()
        .flat_map(|r| r.iter().zip(&means).map(|(v, mu)| (v - mu) * (v - mu)))
        .sum::<f64>()
        / h.data().len() as f64;
    assert!(m.final_mse < baseline, "mse {} vs baseline {baseline}", m.final_mse);
}

#[test]
fn same_seed_is_bit_identical() {
    let x = gaussian_pair(200, 4);
    for variant in Variant::ALL {
        let spec = VaeArchitectureSpec::new(variant, 2, vec![6], 2);
        let a = train(&spec, &x, &small_config(9, 5)).unwrap();
        let b = train(&spec, &x, &small_config(9, 5)).unwrap();
        assert_eq!(a.final_mse.to_bits(), b.final_mse.to_bits(), "{variant:?}");
        assert_eq!(a, b);
    }
}

#[test]
fn mu_matches_a_hand_written_forward_pass() {
    let x = gaussian_pair(100, 6);
    let spec = VaeArchitectureSpec::new(Variant::Beta, 2, vec![5, 4], 3);
    let m = train(&spec, &x, &small_config(1, 3)).unwrap();
    let mu = m.encode_mean(&x).unwrap();
    for r in 0..x.rows() {
        let mut h = x.row(r).to_vec();
        for layer in m.encoder.iter().chain(std::iter::once(&m.mu_head)) {
            let mut out = layer.bias.clone();
            for (o, acc) in out.iter_mut().enumerate() {
                for (i, v) in h.iter().enumerate() {
                    *acc += layer.weight.get(o, i) * v;
                }
                if layer.activation == Activation::Relu && *acc < 0.0 {
                    *acc = 0.0;
                }
            }
            h = out;
        }
        for (k, v) in h.iter().enumerate() {
            assert!((v - mu.get(r, k)).abs() < 1e-12);
        }
    }
}

#[test]
fn fresh_discriminator_sits_at_chance_on_identical_latents() {
    let spec = VaeArchitectureSpec::new(Variant::Factor, 3, vec![4], 2);
    let mut model = TrainedModel::init(spec, 2).unwrap();
    let mut opt = discriminator_optimizer(&model, 1e-4).unwrap();
    let z = Matrix::filled(8, 2, 0.7);
    let disc = model.discriminator.as_mut().unwrap();
    let loss = discriminator_step_on_latents(disc, &mut opt, &z, &mut SeededRng::new(1)).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn discriminator_learns_dependent_latents() {
    let spec = VaeArchitectureSpec::new(Variant::Factor, 3, vec![4], 2);
    let mut model = TrainedModel::init(spec, 2).unwrap();
    let mut opt = discriminator_optimizer(&model, 1e-3).unwrap();
    let mut rng = SeededRng::new(8);
    // Two clusters: (+2, +2) and (-2, -2). Permuting dimensions creates the
    // off-diagonal combinations, which the discriminator can learn to spot.
    let mut data = Vec::new();
    for i in 0..64 {
        let s = if i % 2 == 0 { 2.0 } else { -2.0 };
        data.push(s + 0.1 * rng.standard_normal());
        data.push(s + 0.1 * rng.standard_normal());
    }
    let z = Matrix::from_vec(64, 2, data).unwrap();
    let disc = model.discriminator.as_mut().unwrap();
    let losses: Vec<f64> = (0..100)
        .map(|_| discriminator_step_on_latents(disc, &mut opt, &z, &mut rng).unwrap())
        .collect();
    let early: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let late: f64 = losses[90..].iter().sum::<f64>() / 10.0;
    assert!(late < early - 0.05, "early {early} late {late}");
}
