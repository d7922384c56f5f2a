//! Central finite-difference check of [`loss_and_grad`] on a reduced model.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{loss_and_grad, ClassBalance};
use crate::secnn::{ActivationTrace, ModelConfig, SeCnn};
use crate::seed::rng_for;

/// 8 time steps, 2 channels in every layer.
pub fn reduced_config() -> ModelConfig {
    ModelConfig {
        input_len: 8,
        input_channels: 2,
        conv_channels: vec![2, 2, 2],
        kernel_size: 5,
        pool_size: 2,
        se_reduction: 2,
        dense_units: [4, 3],
        dropout_rate: 0.0,
        seed: 0,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub points: usize,
    pub coordinates_checked: usize,
    /// Coordinates where `+h` and `-h` land on different ReLU/max-pool
    /// branches; the loss is not differentiable across them.
    pub coordinates_skipped: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
}

/// Gradients smaller than this are compared on an absolute scale: the
/// `O(h^2)` truncation error of the central difference does not shrink with
/// the gradient, so a pure ratio is meaningless near zero.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Which branch every piecewise-linear unit took.
fn branch_pattern(trace: &ActivationTrace<f64>) -> Vec<usize> {
    let mut out = Vec::new();
    let sign = |v: &f64| usize::from(*v > 0.0);
    for b in &trace.blocks {
        out.extend(b.conv_pre.iter().map(sign));
        out.extend(b.se.hidden_pre.iter().map(sign));
        out.extend(b.argmax.iter().copied());
    }
    out.extend(trace.dense1_pre.iter().map(sign));
    out.extend(trace.dense2_pre.iter().map(sign));
    out
}

fn patterns(model: &SeCnn<f64>, batch: &[(Vec<f64>, bool)]) -> Vec<Vec<usize>> {
    batch.iter().map(|(x, _)| branch_pattern(&model.forward_trace::<ChaCha8Rng>(x, None))).collect()
}

fn loss(model: &SeCnn<f64>, batch: &[(Vec<f64>, bool)], balance: &ClassBalance) -> f64 {
    let inputs: Vec<(&[f64], bool)> = batch.iter().map(|(x, y)| (&x[..], *y)).collect();
    loss_and_grad::<f64, ChaCha8Rng>(model, &inputs, balance, None).0
}

/// Compare analytic gradients against central differences with step `h` at
/// `points` random parameter points (each with a random 3-window batch).
pub fn gradient_check(cfg: &ModelConfig, points: usize, h: f64, seed: u64) -> GradCheckReport {
    let balance = ClassBalance::from_counts(1, 3).expect("both classes");
    let mut report = GradCheckReport { points, ..Default::default() };
    for point in 0..points {
        let mut rng = rng_for(seed, "gradcheck", &[point as u64]);
        let mut model = SeCnn::<f64>::zeros(cfg).expect("valid reduced config");
        for p in model.params_mut() {
            p.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let batch: Vec<(Vec<f64>, bool)> = (0..3)
            .map(|i| ((0..cfg.input_size()).map(|_| rng.random::<f64>()).collect(), i == 0))
            .collect();
        let inputs: Vec<(&[f64], bool)> = batch.iter().map(|(x, y)| (&x[..], *y)).collect();
        let (_, grads) = loss_and_grad::<f64, ChaCha8Rng>(&model, &inputs, &balance, None);
        let analytic: Vec<Vec<f64>> = grads.params().iter().map(|g| g.to_vec()).collect();

        for (ti, g) in analytic.iter().enumerate() {
            for (ci, &a) in g.iter().enumerate() {
                let original = model.params()[ti][ci];
                model.params_mut()[ti][ci] = original + h;
                let (plus, pat_plus) = (loss(&model, &batch, &balance), patterns(&model, &batch));
                model.params_mut()[ti][ci] = original - h;
                let (minus, pat_minus) = (loss(&model, &batch, &balance), patterns(&model, &batch));
                model.params_mut()[ti][ci] = original;
                if pat_plus != pat_minus {
                    report.coordinates_skipped += 1;
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * h);
                report.coordinates_checked += 1;
                report.max_relative_error = report.max_relative_error.max(relative_error(a, numeric));
                report.max_absolute_error = report.max_absolute_error.max((a - numeric).abs());
            }
        }
    }
    report
}
