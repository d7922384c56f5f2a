use super::*;
use crate::secnn::build_model;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn golden_window() -> Vec<f32> {
    (0..128)
        .flat_map(|t| (0..3).map(move |c| (0.5 + 0.4 * (0.1 * t as f64 * (c + 1) as f64).sin()) as f32))
        .collect()
}

/// Smooth random windows in `[0, 1]`, the shape of normalized accelerometer data.
fn calibration_windows(n: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let f: [f64; 3] = [rng.random_range(0.02..0.4), rng.random_range(0.02..0.4), rng.random_range(0.02..0.4)];
            let a: f64 = rng.random_range(0.1..0.5);
            (0..128).flat_map(|t| (0..3).map(move |c| (0.5 + a * (f[c] * t as f64).sin()) as f32)).collect()
        })
        .collect()
}

fn identity_norm() -> NormStats {
    NormStats { min: [0.0; 3], max: [1.0; 3] }
}

fn quantized(model: &SeCnn<f32>) -> QModel {
    let acts = calibrate(model, &calibration_windows(128, 1)).unwrap();
    quantize(model, acts, identity_norm(), BundleMetadata::default()).unwrap()
}

#[test]
fn affine_mapping_example() {
    let p = QuantParams::from_range(0.0, 6.35);
    // independent arithmetic: 6.35 / 255, and 0.0 must land on -128
    assert!((f64::from(p.scale) - 6.35 / 255.0).abs() < 1e-8);
    assert!((f64::from(p.scale) - 0.0249).abs() < 1e-4);
    assert_eq!(p.zero_point, -128);
    assert_eq!(p.quantize(0.0), -128);
    assert_eq!(p.quantize(6.35), 127);
}

#[test]
fn degenerate_range_uses_scale_floor() {
    let p = QuantParams::from_range(0.0, 0.0);
    assert_eq!(p, QuantParams { scale: SCALE_FLOOR as f32, zero_point: 0 });
    assert_eq!(p.dequantize(p.quantize(0.0)), 0.0);
    // a constant away from zero still gets a range containing 0 and itself
    let p = QuantParams::from_range(2.0, 2.0);
    assert!((p.dequantize(p.quantize(2.0)) - 2.0).abs() <= f64::from(p.scale) / 2.0);
}

#[test]
fn rounding_is_half_to_even() {
    let p = QuantParams { scale: 1.0, zero_point: 0 };
    assert_eq!([0.5, 1.5, 2.5, -0.5, -1.5].map(|x| p.quantize(x)), [0, 2, 2, 0, -2]);
    assert_eq!(rounding_shift_right(6, 2), 2); // 1.5 -> 2
    assert_eq!(rounding_shift_right(10, 2), 2); // 2.5 -> 2
    assert_eq!(rounding_shift_right(-6, 2), -2); // -1.5 -> -2
    assert_eq!(rounding_shift_right(-10, 2), -2); // -2.5 -> -2
    assert_eq!(div_round_half_even(5, 2), 2);
    assert_eq!(div_round_half_even(7, 2), 4);
    assert_eq!(div_round_half_even(-5, 2), -2);
}

#[test]
fn too_few_calibration_windows() {
    let m = build_model::<f32>(&ModelConfig::default()).unwrap();
    assert_eq!(calibrate(&m, &calibration_windows(99, 0)), Err(QuantError::TooFewSamples { got: 99, need: 100 }));
}

#[test]
fn zero_model_outputs_one_half() {
    let m = SeCnn::<f32>::zeros(&ModelConfig::default()).unwrap();
    let q = quantized(&m);
    for l in &q.layers {
        assert!(l.kernel.iter().all(|&v| i32::from(v) == l.kernel_params.zero_point));
    }
    assert_eq!(q.forward_q(&golden_window()).unwrap(), 0.5);
}

#[test]
fn golden_window_close_to_float() {
    let m = build_model::<f32>(&ModelConfig { seed: 42, ..Default::default() }).unwrap();
    let q = quantized(&m);
    let (pf, pq) = (m.forward(&golden_window()).unwrap(), q.forward_q(&golden_window()).unwrap());
    assert!((pf - pq).abs() <= 0.05, "float {pf} quantized {pq}");
}

#[test]
fn integer_path_tracks_float_on_a_sharper_model() {
    // scale weights up so outputs spread over (0,1) instead of hugging 0.5
    let mut m = build_model::<f32>(&ModelConfig { seed: 5, ..Default::default() }).unwrap();
    for p in m.params_mut() {
        p.iter_mut().for_each(|v| *v *= 2.0);
    }
    let q = quantized(&m);
    let windows = calibration_windows(200, 77);
    let (mut worst, mut total, mut agree) = (0.0f32, 0.0f32, 0);
    let mut spread = (1.0f32, 0.0f32);
    for w in &windows {
        let (pf, pq) = (m.forward(w).unwrap(), q.forward_q(w).unwrap());
        worst = worst.max((pf - pq).abs());
        total += (pf - pq).abs();
        agree += usize::from((pf > 0.4) == (pq > 0.4));
        spread = (spread.0.min(pf), spread.1.max(pf));
    }
    assert!(spread.1 - spread.0 > 0.2, "{spread:?}");
    assert!(total / 200.0 < 0.01, "mean |float - quantized| = {}", total / 200.0);
    assert!(worst < 0.1, "max |float - quantized| = {worst}");
    assert!(agree >= 190, "class agreement {agree}/200");
}

#[test]
fn weight_dequantization_bound() {
    let m = build_model::<f32>(&ModelConfig { seed: 8, ..Default::default() }).unwrap();
    let q = quantized(&m);
    for (l, pair) in q.layers.iter().zip(m.params().chunks(2)) {
        let p = l.kernel_params;
        let (lo, hi) = p.representable();
        for (&w, &qw) in pair[0].iter().zip(&l.kernel) {
            let clamped = f64::from(w).clamp(lo, hi);
            assert!((clamped - p.dequantize(qw)).abs() <= f64::from(p.scale) / 2.0 * (1.0 + 1e-9));
        }
    }
}

#[test]
fn serialized_size_and_roundtrip() {
    let m = build_model::<f32>(&ModelConfig { seed: 3, ..Default::default() }).unwrap();
    let q = quantized(&m);
    let bytes = q.to_bytes();
    let float_bytes = WeightsBundle::from_model(&m, identity_norm(), BundleMetadata::default()).to_bytes();
    let ratio = float_bytes.len() as f64 / bytes.len() as f64;
    assert!(ratio >= 3.5, "float {} quantized {} ratio {ratio:.2}", float_bytes.len(), bytes.len());
    // payload: one byte per kernel weight, four per bias
    let kernels: usize = q.layers.iter().map(|l| l.kernel.len()).sum();
    let biases: usize = q.layers.iter().map(|l| l.bias.len()).sum();
    assert_eq!(kernels + biases, 19_819);
    assert!(bytes.len() > kernels + 4 * biases);

    let back = QModel::from_bytes(&bytes).unwrap();
    assert_eq!(back, q);
    assert_eq!(back.to_bytes(), bytes);
    assert!(matches!(QModel::from_bytes(&float_bytes), Err(ModelError::BadMagic("FOGQ"))));
    assert!(QModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn forward_q_is_deterministic_and_checks_shape() {
    let m = build_model::<f32>(&ModelConfig { seed: 11, ..Default::default() }).unwrap();
    let q = quantized(&m);
    let w = golden_window();
    assert_eq!(q.forward_q(&w).unwrap().to_bits(), q.clone().forward_q(&w).unwrap().to_bits());
    assert!(matches!(q.forward_q(&w[..10]), Err(ModelError::ShapeMismatch(_))));
}

proptest! {
    #[test]
    fn fixed_multiplier_matches_exact_rounding(m in 1e-6f64..50.0, acc in -5_000_000i64..5_000_000) {
        let fm = FixedMultiplier::from_real(m);
        prop_assert!((fm.mantissa as f64 * 2f64.powi(-fm.shift) / m - 1.0).abs() < 1e-9);
        // exact oracle on the represented rational mantissa / 2^shift
        let exact = acc as f64 * fm.mantissa as f64 / 2f64.powi(fm.shift);
        prop_assert!((fm.apply(acc) as f64 - exact).abs() <= 0.5 + 1e-6);
    }

    #[test]
    fn quantize_dequantize_within_half_step(lo in -10.0f64..0.0, hi in 0.0f64..10.0, t in 0.0f64..1.0) {
        prop_assume!(hi - lo > 1e-3);
        let p = QuantParams::from_range(lo, hi);
        let (rlo, rhi) = p.representable();
        let x = lo + t * (hi - lo);
        let err = (x.clamp(rlo, rhi) - p.dequantize(p.quantize(x))).abs();
        prop_assert!(err <= f64::from(p.scale) / 2.0 * (1.0 + 1e-9));
    }
}
