//! Synthetic generators and preprocessing checked against direct computation.

use circuitlab_core::data::{
    factor_pixel_grouping, gen_minisprites, minisprite_pixels, synth_tabular, synth_tabular_raw, MiniSpritesSpec,
    Preprocessor, TabularSynthSpec, BACKGROUND_GROUP,
};
use circuitlab_core::probe::{auc, fit_logistic, ProbeConfig};
use circuitlab_core::rng::SeededRng;
use circuitlab_core::tensor::Matrix;

#[test]
fn heterogeneous_scales_span_an_order_of_magnitude() {
    let t = synth_tabular_raw(&TabularSynthSpec::default(), &mut SeededRng::new(1)).unwrap();
    let v: Vec<f64> = t.raw_variances.iter().copied().filter(|v| *v > 0.0).collect();
    let max = v.iter().cloned().fold(0.0, f64::max);
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(max / min >= 10.0, "{min}..{max}");
}

#[test]
fn label_is_predictable_from_true_factors() {
    let b = synth_tabular("s", &TabularSynthSpec::default(), &mut SeededRng::new(2)).unwrap();
    let f = b.factors.as_ref().unwrap();
    let labels = b.labels.as_ref().unwrap();
    let probe = fit_logistic(f, labels, &ProbeConfig::default()).unwrap();
    let a = auc(&probe.probabilities(f), labels).unwrap();
    assert!(a > 0.9, "oracle AUC {a}");
}

#[test]
fn synthetic_bundle_shape() {
    let b = synth_tabular("s", &TabularSynthSpec::default(), &mut SeededRng::new(3)).unwrap();
    assert_eq!(b.n_rows(), 2000);
    assert_eq!(b.group_count(), 3);
    b.validate().unwrap();
}

#[test]
fn preprocessing_is_idempotent_on_its_own_output_scale() {
    let t = synth_tabular_raw(&TabularSynthSpec::default(), &mut SeededRng::new(4)).unwrap();
    let (pre, _) = Preprocessor::fit(&t.schema, &t.table).unwrap();
    let a = pre.apply(&t.table).unwrap().x;
    let b = pre.apply(&t.table).unwrap().x;
    assert_eq!(a, b);
    let means = a.col_means();
    let stds = a.col_stds();
    for (j, name) in pre.feature_names().iter().enumerate() {
        if !name.contains('=') {
            assert!(means[j].abs() < 1e-9, "{name} mean {}", means[j]);
            assert!((stds[j] - 1.0).abs() < 1e-9, "{name} std {}", stds[j]);
        }
    }
}

/// Per-pixel variance of the conditional mean given each factor, computed
/// directly by grouping rows on the factor value. Returns every factor within
/// rounding of the maximum, or an empty list for a factor-insensitive pixel.
fn brute_force_assignment(pixels: &Matrix, factors: &Matrix) -> Vec<Vec<usize>> {
    let n = pixels.rows();
    (0..pixels.cols())
        .map(|p| {
            let mut vars = Vec::new();
            for k in 0..factors.cols() {
                let mut levels: Vec<f64> = (0..n).map(|r| factors.get(r, k)).collect();
                levels.sort_by(f64::total_cmp);
                levels.dedup();
                let mean_all = (0..n).map(|r| pixels.get(r, p)).sum::<f64>() / n as f64;
                let mut var = 0.0;
                for lv in &levels {
                    let rows: Vec<usize> = (0..n).filter(|&r| factors.get(r, k) == *lv).collect();
                    let m = rows.iter().map(|&r| pixels.get(r, p)).sum::<f64>() / rows.len() as f64;
                    var += rows.len() as f64 * (m - mean_all).powi(2);
                }
                vars.push(var / n as f64);
            }
            let max = vars.iter().cloned().fold(0.0, f64::max);
            if max <= 1e-12 {
                return Vec::new();
            }
            (0..vars.len()).filter(|&k| vars[k] >= max * (1.0 - 1e-9)).collect()
        })
        .collect()
}

#[test]
fn two_factor_grouping_matches_variance_table() {
    // Fixed shape and scale: only the two positions vary.
    let spec = MiniSpritesSpec {
        scale_levels: 1,
        pos_levels: 5,
        ..MiniSpritesSpec::default()
    };
    let (pixels, factors) = minisprite_pixels(&spec, &mut SeededRng::new(1)).unwrap();
    let rows: Vec<usize> = (0..pixels.rows()).filter(|&r| factors.get(r, 0) == 0.0).collect();
    let pixels = pixels.select_rows(&rows);
    let factors = factors.select_rows(&rows).select_cols(&[2, 3]);
    let names = vec!["pos_x".to_string(), "pos_y".to_string()];
    let partition = factor_pixel_grouping(&pixels, &factors, &names).unwrap();
    let expected = brute_force_assignment(&pixels, &factors);
    let mut assigned = vec![String::new(); pixels.cols()];
    for (name, members) in partition.names.iter().zip(&partition.groups) {
        for &p in members {
            assigned[p] = name.clone();
        }
    }
    for (p, e) in expected.iter().enumerate() {
        if e.is_empty() {
            assert_eq!(assigned[p], BACKGROUND_GROUP, "pixel {p}");
        } else {
            assert!(e.iter().any(|&k| names[k] == assigned[p]), "pixel {p}: {} not in {e:?}", assigned[p]);
        }
    }
}

#[test]
fn sprite_bundle_is_well_formed() {
    let b = gen_minisprites("s", &MiniSpritesSpec::default(), &mut SeededRng::new(2)).unwrap();
    b.validate().unwrap();
    assert_eq!(b.n_rows(), 3 * 4 * 8 * 8);
    assert!(b.n_features() <= 256);
    assert_eq!(b.factors.as_ref().unwrap().cols(), 4);
}
