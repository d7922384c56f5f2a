use serde::{Deserialize, Serialize};

use crate::secnn::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shapes: &[&[T]]) -> Self {
        let zeros = |p: &&[T]| vec![T::zero(); p.len()];
        Self { m: shapes.iter().map(zeros).collect(), v: shapes.iter().map(zeros).collect(), t: 0 }
    }
}

/// One bias-corrected Adam update; increments `state.t` first.
pub fn adam_step<T: Scalar>(params: Vec<&mut [T]>, grads: &[&[T]], state: &mut AdamState<T>, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let one = T::one();
    let bc1 = T::lit(1.0 - cfg.beta1.powi(state.t as i32));
    let bc2 = T::lit(1.0 - cfg.beta2.powi(state.t as i32));
    let lr = T::lit(cfg.learning_rate);
    let eps = T::lit(cfg.epsilon);
    for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        assert_eq!(p.len(), g.len());
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient_sign() {
        let cfg = AdamConfig::default();
        let mut w = vec![1.0f64, -2.0, 0.5];
        let g = vec![3.0f64, -0.01, 250.0];
        let mut state = AdamState::new(&[&w[..]]);
        adam_step(vec![&mut w[..]], &[&g[..]], &mut state, &cfg);
        let expected = [1.0 - 1e-3, -2.0 + 1e-3, 0.5 - 1e-3];
        for (a, e) in w.iter().zip(expected) {
            assert!((a - e).abs() < 1e-9, "{a} vs {e}");
        }
        assert_eq!(state.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let cfg = AdamConfig::default();
        let mut w = vec![0.3f32, -0.7];
        let before = w.clone();
        let g = vec![0.0f32; 2];
        let mut state = AdamState::new(&[&w[..]]);
        for _ in 0..5 {
            adam_step(vec![&mut w[..]], &[&g[..]], &mut state, &cfg);
        }
        assert_eq!(w, before);
    }

    #[test]
    fn trajectory_is_deterministic() {
        let run = || {
            let cfg = AdamConfig::default();
            let mut w = vec![0.1f32; 4];
            let mut state = AdamState::new(&[&w[..]]);
            for k in 0..50 {
                let g: Vec<f32> = w.iter().enumerate().map(|(i, x)| x - (i + k) as f32 * 0.01).collect();
                adam_step(vec![&mut w[..]], &[&g[..]], &mut state, &cfg);
            }
            w
        };
        assert_eq!(run(), run());
    }
}
