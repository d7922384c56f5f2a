use super::*;
use crate::daphnet_io::make_split;
use crate::dsp::FilteredWindow;
use proptest::prelude::*;
use rand_chacha::ChaCha8Rng;

fn toy_filtered(n_per_class: usize) -> Vec<FilteredWindow> {
    (0..2 * n_per_class)
        .map(|i| {
            let freeze = i % 2 == 0;
            let v = if freeze { 0.9 } else { 0.1 };
            FilteredWindow {
                samples: vec![[v; 3]; 128],
                label: if freeze { Label::Freeze } else { Label::NoFreeze },
                subject_id: 1,
                trial_id: 1,
                site: SensorSite::Ankle,
                start_index: i * 64,
            }
        })
        .collect()
}

/// Toy windows with a 0.0 and a 1.0 sample at the ends, so min-max
/// normalization fit on them keeps the 0.1 / 0.9 levels instead of collapsing
/// the no-freeze class onto exact zeros (a dead-ReLU fixed point).
fn toy_filtered_anchored(n_per_class: usize) -> Vec<FilteredWindow> {
    let mut out = toy_filtered(n_per_class);
    for w in &mut out {
        w.samples[0] = [0.0; 3];
        w.samples[127] = [1.0; 3];
    }
    out
}

fn toy_windows(n_per_class: usize) -> Vec<Window> {
    let identity = NormStats { min: [0.0; 3], max: [1.0; 3] };
    toy_filtered(n_per_class).iter().map(|w| w.normalize(&identity)).collect()
}

#[test]
fn class_balance_examples() {
    let b = ClassBalance::from_counts(100, 300).unwrap();
    assert_eq!(b.weight_freeze, 2.0);
    assert!((b.weight_nofreeze - 0.6667).abs() < 1e-4);
    assert!((b.output_bias_init - (-1.0986)).abs() < 1e-4);

    let b = ClassBalance::from_counts(200, 200).unwrap();
    assert_eq!((b.weight_freeze, b.weight_nofreeze, b.output_bias_init), (1.0, 1.0, 0.0));

    assert!(matches!(ClassBalance::from_counts(0, 5), Err(TrainError::SingleClass { n_freeze: 0, n_nofreeze: 5 })));
}

#[test]
fn weighted_bce_examples() {
    let unit = ClassBalance::unweighted();
    assert!((weighted_bce(0.5, true, &unit) - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(weighted_bce(1.0 - BCE_EPSILON, true, &unit) < 1e-6);
    assert!(weighted_bce(1.0, true, &unit) < 1e-6);
    assert!(weighted_bce(1.0, false, &unit).is_finite());
    let b = ClassBalance { weight_nofreeze: 2.0, ..unit };
    assert!((weighted_bce(0.9, false, &b) - 4.6052).abs() < 1e-4);
}

#[test]
fn output_bias_gradient_is_weighted_residual() {
    let cfg = gradcheck::reduced_config();
    let model = build_model::<f64>(&ModelConfig { seed: 3, ..cfg.clone() }).unwrap();
    let x: Vec<f64> = (0..cfg.input_size()).map(|i| (i as f64 * 0.37).sin().abs()).collect();
    let balance = ClassBalance::from_counts(10, 30).unwrap();
    for y in [true, false] {
        let (_, g) = loss_and_grad::<f64, ChaCha8Rng>(&model, &[(&x, y)], &balance, None);
        let p = model.forward(&x).unwrap();
        let expected = balance.weight(y) * (p - if y { 1.0 } else { 0.0 });
        assert!((g.output.bias[0] - expected).abs() < 1e-12);
    }
}

#[test]
fn saturated_correct_prediction_has_zero_output_gradient() {
    let cfg = gradcheck::reduced_config();
    let mut model = build_model::<f64>(&cfg).unwrap();
    model.set_output_bias(100.0);
    let x = vec![0.5; cfg.input_size()];
    assert_eq!(crate::secnn::sigmoid(100.0f64), 1.0);
    let (_, g) = loss_and_grad::<f64, ChaCha8Rng>(&model, &[(&x, true)], &ClassBalance::unweighted(), None);
    assert!(g.output.kernel.iter().chain(&g.output.bias).all(|v| *v == 0.0));
}

#[test]
fn reduced_model_gradients_match_finite_differences() {
    let report = gradcheck::gradient_check(&gradcheck::reduced_config(), 10, 1e-3, 7);
    assert!(report.coordinates_checked > 1000);
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn zero_epochs_returns_initial_weights() {
    let w = toy_windows(5);
    let cfg = TrainConfig { epochs: 0, seed: 9, ..Default::default() };
    let balance = ClassBalance::from_counts(5, 5).unwrap();
    let norm = NormStats { min: [0.0; 3], max: [1.0; 3] };
    let (bundle, history) =
        train_fold(&w, &w, &ModelConfig::default(), &cfg, &balance, norm, BundleMetadata::default()).unwrap();
    assert!(history.epochs.is_empty());
    let init = build_model::<f32>(&ModelConfig { seed: 9, ..Default::default() }).unwrap();
    assert_eq!(bundle.to_model().unwrap(), init);
}

#[test]
fn toy_set_is_learned_and_deterministic() {
    let train = toy_windows(100);
    let val = toy_windows(20);
    let cfg = TrainConfig { epochs: 20, patience: 20, seed: 4, ..Default::default() };
    let balance = ClassBalance::from_labels(train.iter().map(|w| w.label)).unwrap();
    let norm = NormStats { min: [0.0; 3], max: [1.0; 3] };
    let run = || train_fold(&train, &val, &ModelConfig::default(), &cfg, &balance, norm, BundleMetadata::default()).unwrap();
    let (bundle, history) = run();

    assert!(history.epochs.iter().any(|e| e.val_metrics.accuracy == Some(1.0)));
    let model = bundle.to_model().unwrap();
    let probs = predict(&model, &val);
    let acc = confusion(&probs, &labels(&val), 0.4).unwrap().accuracy().unwrap();
    assert_eq!(acc, 1.0);

    let init = build_model::<f32>(&ModelConfig { seed: 4, ..Default::default() }).unwrap();
    let initial_loss = mean_loss(&predict(&init, &train), &train, &balance);
    assert!(history.epochs[9].train_loss < initial_loss);

    let (again, history_again) = run();
    assert_eq!(again.to_bytes(), bundle.to_bytes());
    assert_eq!(history_again.to_csv(), history.to_csv());
}

#[test]
fn cross_validation_on_toy_set() {
    let windows = toy_filtered_anchored(100);
    let split = make_split(windows.len(), 4, 0.2, 11).unwrap();
    let cfg = TrainConfig { epochs: 20, patience: 20, batch_size: 16, seed: 2, ..Default::default() };
    let cv = cross_validate(&windows, &split, &ModelConfig::default(), &cfg, SensorSite::Ankle).unwrap();
    assert_eq!(cv.folds.len(), 4);
    for f in &cv.folds {
        assert_eq!(f.val_metrics.accuracy, Some(1.0), "fold {}", f.fold);
        // statistics come from the training folds only
        let train_idx = split.train_indices(f.fold);
        let norm = fit_norm(train_idx.iter().flat_map(|&i| windows[i].samples.iter())).unwrap();
        assert_eq!(f.bundle.norm, norm);
        let balance = ClassBalance::from_labels(train_idx.iter().map(|&i| windows[i].label)).unwrap();
        assert_eq!(f.balance, balance);
        assert_eq!(f.bundle.metadata.fold_id, Some(f.fold as u32));
        assert_eq!(f.bundle.metadata.training_seed, fold_seed(2, SensorSite::Ankle, f.fold));
    }
    assert_eq!(cv.aggregate.accuracy, Some(1.0));
    let acc = confusion(&cv.test_probs, &cv.test_labels, 0.4).unwrap().accuracy().unwrap();
    assert_eq!(acc, 1.0);
    let (oof, oof_labels) = cv.out_of_fold();
    assert_eq!(oof.len(), windows.len() - cv.test_indices.len());
    assert_eq!(oof_labels.len(), oof.len());
}

#[test]
fn two_fold_minimal_run_emits_two_bundles() {
    let windows = toy_filtered(6);
    let split = make_split(windows.len(), 2, 0.0, 1).unwrap();
    let cfg = TrainConfig { epochs: 1, ..Default::default() };
    let cv = cross_validate(&windows, &split, &ModelConfig::default(), &cfg, SensorSite::Trunk).unwrap();
    assert_eq!(cv.folds.len(), 2);
    assert!(cv.test_probs.is_empty());
}

proptest! {
    #[test]
    fn balanced_weights_are_neutral(p in 1e-6f64..1.0 - 1e-6, y in any::<bool>(), n in 1usize..1000) {
        let b = ClassBalance::from_counts(n, n).unwrap();
        prop_assert!((weighted_bce(p, y, &b) - weighted_bce(p, y, &ClassBalance::unweighted())).abs() < 1e-12);
    }
}
