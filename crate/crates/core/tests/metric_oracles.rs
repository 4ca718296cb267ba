//! Metric identities and sampling-based checks.

use circuitlab_core::data::Partition;
use circuitlab_core::metrics::{dci_completeness, dci_completeness_raw, fgd, mig, modularity};
use circuitlab_core::rng::SeededRng;
use circuitlab_core::tensor::Matrix;

fn random_r(rng: &mut SeededRng, g: usize, d: usize) -> Matrix {
    let data = (0..g * d)
        .map(|_| {
            let u = rng.uniform();
            // Some exact zeros and a wide dynamic range.
            if u < 0.1 {
                0.0
            } else {
                u * u * 10.0
            }
        })
        .collect();
    Matrix::from_vec(g, d, data).unwrap()
}

/// DCI completeness written out directly: every latent column is a
/// distribution over the single features, scored `1 - H / ln G` and weighted
/// by its share of total importance.
fn completeness_oracle(r: &Matrix) -> f64 {
    let g = r.rows();
    let total: f64 = r.data().iter().sum();
    let mut out = 0.0;
    for d in 0..r.cols() {
        let col = r.column(d);
        let mass: f64 = col.iter().sum();
        if mass == 0.0 {
            continue;
        }
        let h = if g == 1 {
            0.0
        } else {
            -col.iter().filter(|v| **v > 0.0).map(|v| (v / mass) * (v / mass).ln()).sum::<f64>() / (g as f64).ln()
        };
        out += mass / total * (1.0 - h);
    }
    out
}

#[test]
fn raw_completeness_reads_rows_as_codes() {
    let r = Matrix::from_rows(&[[1.0, 0.0], [1.0, 2.0]]).unwrap();
    let direct = dci_completeness_raw(&r).unwrap();
    assert!((direct - completeness_oracle(&r)).abs() < 1e-15);
}

#[test]
fn fgd_equals_dci_completeness_for_singleton_groups() {
    let mut rng = SeededRng::new(3);
    for _ in 0..50 {
        let g = 1 + rng.below(8);
        let d = 1 + rng.below(8);
        let r = random_r(&mut rng, g, d);
        let a = fgd(&r).unwrap();
        let b = dci_completeness(&r, &Partition::singletons(g)).unwrap();
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        let c = completeness_oracle(&r);
        assert!((a - c).abs() <= 1e-12, "{a} vs {c}");
    }
}

#[test]
fn modularity_ignores_overall_scale() {
    let mut rng = SeededRng::new(4);
    for _ in 0..20 {
        let r = random_r(&mut rng, 3, 5);
        let mut s = r.clone();
        s.scale(37.5);
        assert!((modularity(&r).unwrap() - modularity(&s).unwrap()).abs() < 1e-12);
        assert!((fgd(&r).unwrap() - fgd(&s).unwrap()).abs() < 1e-12);
    }
}

fn factor_matrix(rng: &mut SeededRng, n: usize, k: usize) -> Matrix {
    Matrix::from_vec(n, k, rng.normal_vec(n * k)).unwrap()
}

#[test]
fn copied_factors_give_high_mig() {
    let mut rng = SeededRng::new(5);
    let f = factor_matrix(&mut rng, 2000, 3);
    let m = mig(&f, &f).unwrap();
    assert!(m >= 0.9, "mig {m}");
}

#[test]
fn independent_latents_give_near_zero_mig() {
    let mut rng = SeededRng::new(6);
    let f = factor_matrix(&mut rng, 2000, 3);
    let z = factor_matrix(&mut rng, 2000, 4);
    let m = mig(&z, &f).unwrap();
    assert!(m < 0.05, "mig {m}");
}
