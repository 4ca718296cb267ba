//! Hand-written backward passes against central finite differences.

use circuitlab_core::rng::SeededRng;
use circuitlab_core::tensor::{backward, forward_batch, Activation, DenseLayer, Matrix};
use circuitlab_core::vae::{loss_and_grads, Hyper, TrainedModel, VaeArchitectureSpec, Variant};

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-5;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

fn random_net(rng: &mut SeededRng) -> (Vec<DenseLayer>, usize) {
    let depth = 1 + rng.below(3);
    let input = 1 + rng.below(8);
    let mut width = input;
    let mut layers = Vec::new();
    for l in 0..depth {
        let out = 1 + rng.below(8);
        let act = if l + 1 == depth && rng.below(2) == 0 {
            Activation::Identity
        } else {
            Activation::Relu
        };
        let mut layer = DenseLayer::kaiming_uniform(width, out, act, rng);
        // Lift biases so most units are active and gradients are non-trivial.
        layer.bias.iter_mut().for_each(|b| *b += 0.3);
        layers.push(layer);
        width = out;
    }
    (layers, input)
}

fn weighted_output(layers: &[DenseLayer], x: &Matrix, coef: &Matrix) -> f64 {
    let (y, _) = forward_batch(layers, x).unwrap();
    y.data().iter().zip(coef.data()).map(|(a, b)| a * b).sum()
}

#[test]
fn random_mlps_match_finite_differences() {
    let mut rng = SeededRng::new(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (mut layers, input) = random_net(&mut rng);
        let batch = 1 + rng.below(4);
        let x = Matrix::from_vec(batch, input, rng.normal_vec(batch * input)).unwrap();
        let out = layers.last().unwrap().output_dim();
        let coef = Matrix::from_vec(batch, out, rng.normal_vec(batch * out)).unwrap();
        let (_, cache) = forward_batch(&layers, &x).unwrap();
        let (grads, dx) = backward(&layers, &cache, &coef).unwrap();

        for l in 0..layers.len() {
            for i in 0..layers[l].weight.data().len() {
                let orig = layers[l].weight.data()[i];
                layers[l].weight.data_mut()[i] = orig + H;
                let plus = weighted_output(&layers, &x, &coef);
                layers[l].weight.data_mut()[i] = orig - H;
                let minus = weighted_output(&layers, &x, &coef);
                layers[l].weight.data_mut()[i] = orig;
                let e = rel_err(grads[l].weight.data()[i], (plus - minus) / (2.0 * H));
                worst = worst.max(e);
            }
            for i in 0..layers[l].bias.len() {
                let orig = layers[l].bias[i];
                layers[l].bias[i] = orig + H;
                let plus = weighted_output(&layers, &x, &coef);
                layers[l].bias[i] = orig - H;
                let minus = weighted_output(&layers, &x, &coef);
                layers[l].bias[i] = orig;
                worst = worst.max(rel_err(grads[l].bias[i], (plus - minus) / (2.0 * H)));
            }
        }
        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += H;
            let mut xm = x.clone();
            xm.data_mut()[i] -= H;
            let numeric =
                (weighted_output(&layers, &xp, &coef) - weighted_output(&layers, &xm, &coef)) / (2.0 * H);
            worst = worst.max(rel_err(dx.data()[i], numeric));
        }
    }
    assert!(worst < REL_TOL, "worst relative error {worst:e}");
}

fn vae_fixture(variant: Variant, hyper: Hyper) -> (TrainedModel, Matrix, Matrix) {
    let spec = VaeArchitectureSpec::new(variant, 5, vec![6, 4], 3).with_hyper(hyper);
    let mut model = TrainedModel::init(spec, 11).unwrap();
    let mut rng = SeededRng::new(77);
    // A discriminator with a non-zero head so its gradient path is exercised.
    if let Some(disc) = model.discriminator.as_mut() {
        let head = disc.last_mut().unwrap();
        head.weight.data_mut().iter_mut().for_each(|w| *w = 0.3 * rng.standard_normal());
    }
    let x = Matrix::from_vec(6, 5, rng.normal_vec(30)).unwrap();
    let eps = Matrix::from_vec(6, 3, rng.normal_vec(18)).unwrap();
    (model, x, eps)
}

fn check_variant(variant: Variant, hyper: Hyper) {
    let (mut model, x, eps) = vae_fixture(variant, hyper);
    let dataset_size = 50;
    let (_, grads) = loss_and_grads(&model, &x, &eps, dataset_size, true).unwrap();
    let grads = grads.unwrap();
    let analytic: Vec<f64> = grads
        .all()
        .iter()
        .flat_map(|g| g.weight.data().iter().chain(&g.bias).copied().collect::<Vec<_>>())
        .collect();

    let loss = |m: &TrainedModel| loss_and_grads(m, &x, &eps, dataset_size, false).unwrap().0.total;
    let mut numeric = Vec::new();
    let n_enc = model.encoder.len();
    let n_dec = model.decoder.len();
    for idx in 0..(n_enc + 2 + n_dec) {
        let count = {
            let layer = layer_at(&mut model, idx);
            layer.weight.data().len() + layer.bias.len()
        };
        for p in 0..count {
            let orig = param(&mut model, idx, p, None);
            param(&mut model, idx, p, Some(orig + H));
            let plus = loss(&model);
            param(&mut model, idx, p, Some(orig - H));
            let minus = loss(&model);
            param(&mut model, idx, p, Some(orig));
            numeric.push((plus - minus) / (2.0 * H));
        }
    }
    assert_eq!(analytic.len(), numeric.len());
    let worst = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| rel_err(*a, *n))
        .fold(0.0, f64::max);
    assert!(worst < REL_TOL, "{variant:?}: worst relative error {worst:e}");
}

fn layer_at(model: &mut TrainedModel, idx: usize) -> &mut DenseLayer {
    let n_enc = model.encoder.len();
    if idx < n_enc {
        &mut model.encoder[idx]
    } else if idx == n_enc {
        &mut model.mu_head
    } else if idx == n_enc + 1 {
        &mut model.logvar_head
    } else {
        &mut model.decoder[idx - n_enc - 2]
    }
}

fn param(model: &mut TrainedModel, idx: usize, p: usize, set: Option<f64>) -> f64 {
    let layer = layer_at(model, idx);
    let nw = layer.weight.data().len();
    let slot = if p < nw {
        &mut layer.weight.data_mut()[p]
    } else {
        &mut layer.bias[p - nw]
    };
    if let Some(v) = set {
        *slot = v;
    }
    *slot
}

#[test]
fn standard_loss_gradients() {
    check_variant(Variant::Standard, Hyper::default());
}

#[test]
fn beta_loss_gradients() {
    check_variant(Variant::Beta, Hyper::default());
}

#[test]
fn beta_tc_loss_gradients() {
    check_variant(Variant::BetaTc, Hyper::default());
}

#[test]
fn factor_loss_gradients() {
    check_variant(Variant::Factor, Hyper::default());
}

#[test]
fn dip_ii_loss_gradients() {
    check_variant(Variant::DipII, Hyper::default());
}
