//! Squeeze-and-excitation 1-D CNN.
//!
//! Three conv blocks (`Conv1D same` -> ReLU -> SE gate -> max-pool), then a
//! flatten, `Dense -> ReLU -> Dropout -> Dense -> ReLU -> Dense -> sigmoid`.
//! Activations are time-major (`[t * channels + c]`), conv kernels are
//! `[k][c_in][c_out]` and dense kernels `[in][out]`.
//!
//! The model is generic over the scalar type: `f32` is the reference
//! inference path, `f64` is used by the finite-difference gradient check.

mod bundle;

pub use bundle::{BundleMetadata, NamedTensor, WeightsBundle, BUNDLE_MAGIC, BUNDLE_VERSION};

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::seed::rng_for;

/// Trainable-parameter budget of one node model.
pub const PARAM_BUDGET: usize = 20_000;

pub trait Scalar: Float + FromPrimitive + ToPrimitive + Sum + Debug + Default + Send + Sync + 'static {
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }
}

impl<T> Scalar for T where T: Float + FromPrimitive + ToPrimitive + Sum + Debug + Default + Send + Sync + 'static {}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("model has {0} trainable parameters, budget is {PARAM_BUDGET}")]
    BudgetExceeded(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("bad magic: not a {0} file")]
    BadMagic(&'static str),
    #[error("version mismatch: {0}")]
    VersionMismatch(String),
    #[error("corrupt header: {0}")]
    Header(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_len: usize,
    pub input_channels: usize,
    pub conv_channels: Vec<usize>,
    pub kernel_size: usize,
    pub pool_size: usize,
    pub se_reduction: usize,
    pub dense_units: [usize; 2],
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_len: 128,
            input_channels: 3,
            conv_channels: vec![16, 24, 32],
            kernel_size: 5,
            pool_size: 2,
            se_reduction: 4,
            dense_units: [24, 16],
            dropout_rate: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        Self { name: name.into(), shape: shape.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.conv_channels.is_empty() {
            return bad("at least one conv block is required".into());
        }
        if self.input_len == 0 || self.input_channels == 0 || self.conv_channels.contains(&0) || self.dense_units.contains(&0) {
            return bad("zero-width layers are not allowed".into());
        }
        if self.kernel_size % 2 == 0 {
            return bad(format!("kernel_size {} must be odd for same padding", self.kernel_size));
        }
        if self.pool_size < 1 || self.se_reduction < 1 {
            return bad("pool_size and se_reduction must be >= 1".into());
        }
        let total_pool = self.pool_size.pow(self.conv_channels.len() as u32);
        if self.input_len % total_pool != 0 {
            return bad(format!("input_len {} not divisible by {total_pool}", self.input_len));
        }
        for &c in &self.conv_channels {
            if c % self.se_reduction != 0 {
                return bad(format!("channels {c} not divisible by se_reduction {}", self.se_reduction));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} must be in [0,1)", self.dropout_rate));
        }
        Ok(())
    }

    /// Temporal length after the last pooling stage.
    pub fn final_len(&self) -> usize {
        self.input_len / self.pool_size.pow(self.conv_channels.len() as u32)
    }

    pub fn flatten_len(&self) -> usize {
        self.final_len() * self.conv_channels.last().copied().unwrap_or(0)
    }

    pub fn input_size(&self) -> usize {
        self.input_len * self.input_channels
    }

    /// Every trainable tensor in canonical order.
    pub fn tensor_specs(&self) -> Vec<TensorSpec> {
        let mut specs = Vec::new();
        let mut cin = self.input_channels;
        for (i, &cout) in self.conv_channels.iter().enumerate() {
            let b = i + 1;
            let hidden = cout / self.se_reduction;
            specs.push(TensorSpec::new(format!("conv{b}.kernel"), &[self.kernel_size, cin, cout]));
            specs.push(TensorSpec::new(format!("conv{b}.bias"), &[cout]));
            specs.push(TensorSpec::new(format!("se{b}.squeeze.kernel"), &[cout, hidden]));
            specs.push(TensorSpec::new(format!("se{b}.squeeze.bias"), &[hidden]));
            specs.push(TensorSpec::new(format!("se{b}.excite.kernel"), &[hidden, cout]));
            specs.push(TensorSpec::new(format!("se{b}.excite.bias"), &[cout]));
            cin = cout;
        }
        let [d1, d2] = self.dense_units;
        specs.push(TensorSpec::new("dense1.kernel", &[self.flatten_len(), d1]));
        specs.push(TensorSpec::new("dense1.bias", &[d1]));
        specs.push(TensorSpec::new("dense2.kernel", &[d1, d2]));
        specs.push(TensorSpec::new("dense2.bias", &[d2]));
        specs.push(TensorSpec::new("output.kernel", &[d2, 1]));
        specs.push(TensorSpec::new("output.bias", &[1]));
        specs
    }

    pub fn param_count(&self) -> usize {
        self.tensor_specs().iter().map(TensorSpec::len).sum()
    }

    /// Short content hash identifying the architecture. The init seed is
    /// excluded so every fold/site model of one architecture shares a hash.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(&ModelConfig { seed: 0, ..self.clone() }).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub n_in: usize,
    pub n_out: usize,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { n_in, n_out, kernel: vec![T::zero(); n_in * n_out], bias: vec![T::zero(); n_out] }
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.n_in);
        let mut out = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let row = &self.kernel[i * self.n_out..(i + 1) * self.n_out];
            for (o, w) in out.iter_mut().zip(row) {
                *o = *o + xi * *w;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel_size: usize,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv1d<T> {
    fn zeros(c_in: usize, c_out: usize, kernel_size: usize) -> Self {
        Self { c_in, c_out, kernel_size, kernel: vec![T::zero(); kernel_size * c_in * c_out], bias: vec![T::zero(); c_out] }
    }

    pub fn pad(&self) -> usize {
        (self.kernel_size - 1) / 2
    }

    /// Same-padded convolution over `len` time steps.
    pub fn forward(&self, x: &[T], len: usize) -> Vec<T> {
        let (cin, cout, pad) = (self.c_in, self.c_out, self.pad());
        let mut out = Vec::with_capacity(len * cout);
        for _ in 0..len {
            out.extend_from_slice(&self.bias);
        }
        for t in 0..len {
            let acc = &mut out[t * cout..(t + 1) * cout];
            for j in 0..self.kernel_size {
                let Some(src) = (t + j).checked_sub(pad).filter(|&s| s < len) else { continue };
                for ci in 0..cin {
                    let xv = x[src * cin + ci];
                    if xv == T::zero() {
                        continue;
                    }
                    let row = &self.kernel[(j * cin + ci) * cout..(j * cin + ci + 1) * cout];
                    for (a, w) in acc.iter_mut().zip(row) {
                        *a = *a + xv * *w;
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SqueezeExcite<T> {
    pub channels: usize,
    pub squeeze: Dense<T>,
    pub excite: Dense<T>,
}

/// Intermediate values of one SE gate application.
#[derive(Debug, Clone, PartialEq)]
pub struct SeTrace<T> {
    pub squeezed: Vec<T>,
    pub hidden_pre: Vec<T>,
    pub hidden: Vec<T>,
    pub gate: Vec<T>,
    pub output: Vec<T>,
}

impl<T: Scalar> SqueezeExcite<T> {
    /// Channel mean -> Dense+ReLU -> Dense+sigmoid -> per-channel scaling.
    pub fn forward(&self, x: &[T], len: usize) -> SeTrace<T> {
        let c = self.channels;
        let inv_len = T::one() / T::lit(len as f64);
        let mut squeezed = vec![T::zero(); c];
        for t in 0..len {
            for (s, v) in squeezed.iter_mut().zip(&x[t * c..(t + 1) * c]) {
                *s = *s + *v;
            }
        }
        for s in &mut squeezed {
            *s = *s * inv_len;
        }
        let hidden_pre = self.squeeze.forward(&squeezed);
        let hidden: Vec<T> = hidden_pre.iter().map(|&v| relu(v)).collect();
        let gate: Vec<T> = self.excite.forward(&hidden).into_iter().map(sigmoid).collect();
        let output = x.iter().enumerate().map(|(i, &v)| v * gate[i % c]).collect();
        SeTrace { squeezed, hidden_pre, hidden, gate, output }
    }
}

/// Max-pool with stride = size; ties resolve to the earliest index.
pub fn max_pool<T: Scalar>(x: &[T], len: usize, channels: usize, size: usize) -> (Vec<T>, Vec<usize>) {
    let out_len = len / size;
    let mut out = Vec::with_capacity(out_len * channels);
    let mut argmax = Vec::with_capacity(out_len * channels);
    for i in 0..out_len {
        for c in 0..channels {
            let mut best = (i * size) * channels + c;
            for j in 1..size {
                let idx = (i * size + j) * channels + c;
                if x[idx] > x[best] {
                    best = idx;
                }
            }
            out.push(x[best]);
            argmax.push(best);
        }
    }
    (out, argmax)
}

pub fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub conv: Conv1d<T>,
    pub se: SqueezeExcite<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockTrace<T> {
    pub len: usize,
    pub input: Vec<T>,
    pub conv_pre: Vec<T>,
    pub conv_act: Vec<T>,
    pub se: SeTrace<T>,
    pub pooled: Vec<T>,
    pub argmax: Vec<usize>,
}

/// Per-layer outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace<T> {
    pub blocks: Vec<BlockTrace<T>>,
    pub flat: Vec<T>,
    pub dense1_pre: Vec<T>,
    pub dense1: Vec<T>,
    /// Inverted-dropout multipliers (0 or `1/(1-rate)`), training only.
    pub dropout_mask: Option<Vec<T>>,
    pub dense1_dropped: Vec<T>,
    pub dense2_pre: Vec<T>,
    pub dense2: Vec<T>,
    pub logit: T,
    pub probability: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeCnn<T> {
    pub config: ModelConfig,
    pub blocks: Vec<ConvBlock<T>>,
    pub dense1: Dense<T>,
    pub dense2: Dense<T>,
    pub output: Dense<T>,
}

/// Build a Glorot-uniform initialized model; biases start at zero.
pub fn build_model<T: Scalar>(cfg: &ModelConfig) -> Result<SeCnn<T>, ModelError> {
    let mut model = SeCnn::<T>::zeros(cfg)?;
    let mut rng = rng_for(cfg.seed, "init", &[]);
    let specs = cfg.tensor_specs();
    for (spec, tensor) in specs.iter().zip(model.params_mut()) {
        if spec.shape.len() < 2 {
            continue;
        }
        let (fan_in, fan_out) = match spec.shape.as_slice() {
            [k, cin, cout] => (k * cin, k * cout),
            [n_in, n_out] => (*n_in, *n_out),
            _ => unreachable!(),
        };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in tensor.iter_mut() {
            *w = T::lit(rng.random_range(-limit..limit));
        }
    }
    Ok(model)
}

impl<T: Scalar> SeCnn<T> {
    /// All-zero model (every weight and bias zero); checks config and budget.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let count = cfg.param_count();
        if count > PARAM_BUDGET {
            return Err(ModelError::BudgetExceeded(count));
        }
        let mut blocks = Vec::new();
        let mut cin = cfg.input_channels;
        for &cout in &cfg.conv_channels {
            let hidden = cout / cfg.se_reduction;
            blocks.push(ConvBlock {
                conv: Conv1d::zeros(cin, cout, cfg.kernel_size),
                se: SqueezeExcite { channels: cout, squeeze: Dense::zeros(cout, hidden), excite: Dense::zeros(hidden, cout) },
            });
            cin = cout;
        }
        let [d1, d2] = cfg.dense_units;
        Ok(Self {
            config: cfg.clone(),
            blocks,
            dense1: Dense::zeros(cfg.flatten_len(), d1),
            dense2: Dense::zeros(d1, d2),
            output: Dense::zeros(d2, 1),
        })
    }

    /// Zero-valued tensors of identical shapes (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.iter_mut().for_each(|v| *v = T::zero());
        }
        z
    }

    /// Trainable tensors in [`ModelConfig::tensor_specs`] order.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for b in &self.blocks {
            out.push(&b.conv.kernel);
            out.push(&b.conv.bias);
            out.push(&b.se.squeeze.kernel);
            out.push(&b.se.squeeze.bias);
            out.push(&b.se.excite.kernel);
            out.push(&b.se.excite.bias);
        }
        for d in [&self.dense1, &self.dense2, &self.output] {
            out.push(&d.kernel);
            out.push(&d.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.conv.kernel);
            out.push(&mut b.conv.bias);
            out.push(&mut b.se.squeeze.kernel);
            out.push(&mut b.se.squeeze.bias);
            out.push(&mut b.se.excite.kernel);
            out.push(&mut b.se.excite.bias);
        }
        for d in [&mut self.dense1, &mut self.dense2, &mut self.output] {
            out.push(&mut d.kernel);
            out.push(&mut d.bias);
        }
        out
    }

    pub fn set_output_bias(&mut self, bias: f64) {
        self.output.bias[0] = T::lit(bias);
    }

    pub fn cast<U: Scalar>(&self) -> SeCnn<U> {
        let mut out = SeCnn::<U>::zeros(&self.config).expect("shape already validated");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = U::from_f64(s.to_f64().unwrap()).unwrap();
            }
        }
        out
    }

    pub fn check_input(&self, window: &[T]) -> Result<(), ModelError> {
        let expected = self.config.input_size();
        if window.len() != expected {
            return Err(ModelError::ShapeMismatch(format!(
                "input has {} values, expected {}x{} = {expected}",
                window.len(),
                self.config.input_len,
                self.config.input_channels
            )));
        }
        Ok(())
    }

    /// Inference: dropout disabled, returns the sigmoid probability.
    pub fn forward(&self, window: &[T]) -> Result<T, ModelError> {
        self.check_input(window)?;
        Ok(self.forward_trace::<rand_chacha::ChaCha8Rng>(window, None).probability)
    }

    /// Full forward pass keeping every intermediate. With `dropout_rng` the
    /// dropout layer draws a fresh inverted-dropout mask.
    pub fn forward_trace<R: Rng>(&self, window: &[T], dropout_rng: Option<&mut R>) -> ActivationTrace<T> {
        let cfg = &self.config;
        let mut len = cfg.input_len;
        let mut x = window.to_vec();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let conv_pre = b.conv.forward(&x, len);
            let conv_act: Vec<T> = conv_pre.iter().map(|&v| relu(v)).collect();
            let se = b.se.forward(&conv_act, len);
            let (pooled, argmax) = max_pool(&se.output, len, b.conv.c_out, cfg.pool_size);
            let input = std::mem::replace(&mut x, pooled.clone());
            blocks.push(BlockTrace { len, input, conv_pre, conv_act, se, pooled, argmax });
            len /= cfg.pool_size;
        }
        let flat = x;
        let dense1_pre = self.dense1.forward(&flat);
        let dense1: Vec<T> = dense1_pre.iter().map(|&v| relu(v)).collect();
        let dropout_mask = dropout_rng.filter(|_| cfg.dropout_rate > 0.0).map(|rng| {
            let keep = T::lit(1.0 / (1.0 - cfg.dropout_rate));
            (0..dense1.len())
                .map(|_| if rng.random::<f64>() < cfg.dropout_rate { T::zero() } else { keep })
                .collect::<Vec<T>>()
        });
        let dense1_dropped = match &dropout_mask {
            Some(m) => dense1.iter().zip(m).map(|(a, b)| *a * *b).collect(),
            None => dense1.clone(),
        };
        let dense2_pre = self.dense2.forward(&dense1_dropped);
        let dense2: Vec<T> = dense2_pre.iter().map(|&v| relu(v)).collect();
        let logit = self.output.forward(&dense2)[0];
        let probability = clamp_probability(sigmoid(logit));
        ActivationTrace { blocks, flat, dense1_pre, dense1, dropout_mask, dense1_dropped, dense2_pre, dense2, logit, probability }
    }
}

/// Keeps the sigmoid output strictly inside (0,1) at the type's precision.
pub fn clamp_probability<T: Scalar>(p: T) -> T {
    let hi = T::one() - T::epsilon() / T::lit(2.0);
    p.max(T::min_positive_value()).min(hi)
}

/// Trainable parameter count.
pub fn count_params<T: Scalar>(model: &SeCnn<T>) -> usize {
    model.params().iter().map(|p| p.len()).sum()
}
