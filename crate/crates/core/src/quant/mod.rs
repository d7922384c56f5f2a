//! Post-training int8 quantization and an integer-only forward pass.
//!
//! Affine per-tensor scheme: `real = scale * (q - zero_point)`. Weights and
//! activations are int8, biases int32 at scale `s_in * s_w` with zero point
//! 0. Between layers the int32 accumulators are requantized with a
//! fixed-point multiplier (int32 mantissa, right shift, round half to even).
//! The SE gate sigmoid is a 256-entry lookup table built when the model is
//! loaded. The only floating point at inference is quantizing the input
//! window and the final sigmoid on the dequantized logit.

mod format;

pub use format::{QMODEL_MAGIC, QMODEL_VERSION};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::NormStats;
use crate::secnn::{clamp_probability, sigmoid, BundleMetadata, ModelConfig, ModelError, SeCnn, WeightsBundle};

pub const MIN_CALIBRATION_WINDOWS: usize = 100;
pub const SCALE_FLOOR: f64 = 1e-8;

/// Output params of the SE gate lookup table: `[0, 1)` over int8.
pub const GATE_PARAMS: QuantParams = QuantParams { scale: 1.0 / 256.0, zero_point: -128 };

#[derive(Debug, Error, PartialEq)]
pub enum QuantError {
    #[error("calibration needs at least {need} windows, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i32,
}

impl QuantParams {
    /// Affine map of `[min, max]` (widened to contain 0) onto `[-128, 127]`.
    /// An all-zero range gets the scale floor and zero point 0.
    pub fn from_range(min: f64, max: f64) -> Self {
        let (lo, hi) = (min.min(0.0), max.max(0.0));
        if hi - lo <= 0.0 {
            return Self { scale: SCALE_FLOOR as f32, zero_point: 0 };
        }
        let scale = (((hi - lo) / 255.0).max(SCALE_FLOOR)) as f32;
        let zp = (-128.0 - lo / f64::from(scale)).round_ties_even().clamp(-128.0, 127.0);
        Self { scale, zero_point: zp as i32 }
    }

    pub fn quantize(&self, x: f64) -> i8 {
        let q = (x / f64::from(self.scale)).round_ties_even() + f64::from(self.zero_point);
        q.clamp(-128.0, 127.0) as i8
    }

    pub fn dequantize(&self, q: i8) -> f64 {
        f64::from(self.scale) * f64::from(i32::from(q) - self.zero_point)
    }

    /// Real interval representable by int8 under these params.
    pub fn representable(&self) -> (f64, f64) {
        (self.dequantize(-128), self.dequantize(127))
    }
}

/// `value = mantissa * 2^-shift`, mantissa in `[2^30, 2^31)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedMultiplier {
    pub mantissa: i64,
    pub shift: i32,
}

impl FixedMultiplier {
    pub fn from_real(m: f64) -> Self {
        assert!(m > 0.0 && m.is_finite(), "multiplier {m} must be positive");
        let mut exp = m.log2().floor() as i32 + 1;
        let mut frac = m / 2f64.powi(exp);
        if frac >= 1.0 {
            frac /= 2.0;
            exp += 1;
        } else if frac < 0.5 {
            frac *= 2.0;
            exp -= 1;
        }
        let mut mantissa = (frac * 2f64.powi(31)).round_ties_even() as i64;
        if mantissa == 1 << 31 {
            mantissa /= 2;
            exp += 1;
        }
        Self { mantissa, shift: 31 - exp }
    }

    pub fn apply(self, acc: i64) -> i64 {
        let v = acc * self.mantissa;
        if self.shift <= 0 {
            v << (-self.shift).min(30)
        } else if self.shift >= 63 {
            0
        } else {
            rounding_shift_right(v, self.shift as u32)
        }
    }
}

/// `v / 2^s` rounded half to even.
fn rounding_shift_right(v: i64, s: u32) -> i64 {
    let q = v >> s;
    let r = v - (q << s);
    let half = 1i64 << (s - 1);
    if r > half || (r == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

/// `n / d` rounded half to even, `d > 0`.
fn div_round_half_even(n: i64, d: i64) -> i64 {
    let q = n.div_euclid(d);
    let r2 = 2 * n.rem_euclid(d);
    if r2 > d || (r2 == d && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockActivationParams {
    /// Conv output after ReLU.
    pub conv: QuantParams,
    pub se_hidden: QuantParams,
    /// Excite pre-activation (sigmoid input).
    pub se_excite: QuantParams,
    /// Gated block output (pool input and output).
    pub se_out: QuantParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationParams {
    pub input: QuantParams,
    pub blocks: Vec<BlockActivationParams>,
    pub dense1: QuantParams,
    pub dense2: QuantParams,
    pub logit: QuantParams,
}

#[derive(Default, Clone, Copy)]
struct Range(f64, f64);

impl Range {
    fn empty() -> Self {
        Range(f64::INFINITY, f64::NEG_INFINITY)
    }

    fn observe(&mut self, values: impl IntoIterator<Item = f32>) {
        for v in values {
            self.0 = self.0.min(f64::from(v));
            self.1 = self.1.max(f64::from(v));
        }
    }

    fn params(self) -> QuantParams {
        QuantParams::from_range(self.0, self.1)
    }
}

/// Observe every quantized activation over the calibration windows (float
/// model, dropout off) and derive its params from the min/max.
pub fn calibrate<W: AsRef<[f32]>>(model: &SeCnn<f32>, windows: &[W]) -> Result<ActivationParams, QuantError> {
    if windows.len() < MIN_CALIBRATION_WINDOWS {
        return Err(QuantError::TooFewSamples { got: windows.len(), need: MIN_CALIBRATION_WINDOWS });
    }
    let nb = model.blocks.len();
    let mut input = Range::empty();
    let mut blocks = vec![[Range::empty(); 4]; nb];
    let (mut d1, mut d2, mut logit) = (Range::empty(), Range::empty(), Range::empty());
    for w in windows {
        let w = w.as_ref();
        model.check_input(w)?;
        let t = model.forward_trace::<rand_chacha::ChaCha8Rng>(w, None);
        input.observe(w.iter().copied());
        for ((r, bt), block) in blocks.iter_mut().zip(&t.blocks).zip(&model.blocks) {
            r[0].observe(bt.conv_act.iter().copied());
            r[1].observe(bt.se.hidden.iter().copied());
            r[2].observe(block.se.excite.forward(&bt.se.hidden));
            r[3].observe(bt.se.output.iter().copied());
        }
        d1.observe(t.dense1.iter().copied());
        d2.observe(t.dense2.iter().copied());
        logit.observe([t.logit]);
    }
    Ok(ActivationParams {
        input: input.params(),
        blocks: blocks
            .iter()
            .map(|r| BlockActivationParams {
                conv: r[0].params(),
                se_hidden: r[1].params(),
                se_excite: r[2].params(),
                se_out: r[3].params(),
            })
            .collect(),
        dense1: d1.params(),
        dense2: d2.params(),
        logit: logit.params(),
    })
}

/// One quantized conv or dense layer: int8 kernel, int32 bias.
#[derive(Debug, Clone, PartialEq)]
pub struct QLayer {
    pub kernel: Vec<i8>,
    pub kernel_params: QuantParams,
    /// Quantized at `input_scale * kernel_scale`, zero point 0.
    pub bias: Vec<i32>,
}

/// Integer constants derived from the stored tensors on construction.
#[derive(Debug, Clone, PartialEq)]
struct Plan {
    /// Per layer, in [`QModel::layers`] order.
    centered_kernels: Vec<Vec<i32>>,
    multipliers: Vec<FixedMultiplier>,
    /// Per block: excite int8 -> gate int8.
    gate_luts: Vec<[i8; 256]>,
    /// Per block: conv * gate -> se_out.
    gate_multipliers: Vec<FixedMultiplier>,
}

/// Quantized SE-CNN. Layers are ordered block by block (conv, squeeze,
/// excite), then dense1, dense2, output.
#[derive(Debug, Clone, PartialEq)]
pub struct QModel {
    pub config: ModelConfig,
    pub norm: NormStats,
    pub metadata: BundleMetadata,
    pub layers: Vec<QLayer>,
    pub activations: ActivationParams,
    plan: Plan,
}

impl QModel {
    /// `(input params, output params, relu)` of every layer.
    fn layer_io(acts: &ActivationParams) -> Vec<(QuantParams, QuantParams, bool)> {
        let mut io = Vec::new();
        let mut prev = acts.input;
        for b in &acts.blocks {
            io.push((prev, b.conv, true));
            io.push((b.conv, b.se_hidden, true));
            io.push((b.se_hidden, b.se_excite, false));
            prev = b.se_out;
        }
        io.push((prev, acts.dense1, true));
        io.push((acts.dense1, acts.dense2, true));
        io.push((acts.dense2, acts.logit, false));
        io
    }

    fn build(
        config: ModelConfig,
        norm: NormStats,
        metadata: BundleMetadata,
        layers: Vec<QLayer>,
        activations: ActivationParams,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let io = Self::layer_io(&activations);
        let specs = config.tensor_specs();
        if activations.blocks.len() != config.conv_channels.len() || layers.len() * 2 != specs.len() {
            return Err(ModelError::ShapeMismatch("quantized layers do not match the config".into()));
        }
        for (layer, pair) in layers.iter().zip(specs.chunks(2)) {
            if layer.kernel.len() != pair[0].len() || layer.bias.len() != pair[1].len() {
                return Err(ModelError::ShapeMismatch(format!("quantized tensor {} has the wrong size", pair[0].name)));
            }
        }
        let centered_kernels = layers
            .iter()
            .map(|l| l.kernel.iter().map(|&q| i32::from(q) - l.kernel_params.zero_point).collect())
            .collect();
        let multipliers = layers
            .iter()
            .zip(&io)
            .map(|(l, (inp, out, _))| {
                FixedMultiplier::from_real(f64::from(inp.scale) * f64::from(l.kernel_params.scale) / f64::from(out.scale))
            })
            .collect();
        let gate_luts = activations
            .blocks
            .iter()
            .map(|b| {
                let mut lut = [0i8; 256];
                for (i, slot) in lut.iter_mut().enumerate() {
                    let x = b.se_excite.dequantize((i as i32 - 128) as i8);
                    *slot = GATE_PARAMS.quantize(sigmoid(x));
                }
                lut
            })
            .collect();
        let gate_multipliers = activations
            .blocks
            .iter()
            .map(|b| FixedMultiplier::from_real(f64::from(b.conv.scale) * f64::from(GATE_PARAMS.scale) / f64::from(b.se_out.scale)))
            .collect();
        let plan = Plan { centered_kernels, multipliers, gate_luts, gate_multipliers };
        Ok(Self { config, norm, metadata, layers, activations, plan })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.kernel.len() + l.bias.len()).sum()
    }

    pub fn input_params(&self) -> QuantParams {
        self.activations.input
    }

    /// Integer-only inference from a quantized input to the int8 logit.
    pub fn forward_int(&self, input: &[i8]) -> i8 {
        let cfg = &self.config;
        let io = Self::layer_io(&self.activations);
        let mut len = cfg.input_len;
        let mut x: Vec<i8> = input.to_vec();
        let mut cin = cfg.input_channels;
        for (b, &cout) in cfg.conv_channels.iter().enumerate() {
            let (li, se_acts) = (3 * b, &self.activations.blocks[b]);
            let a = self.conv_int(li, &x, len, cin, cout, io[li]);

            // squeeze: channel means of the centered activations
            let zp_a = i64::from(se_acts.conv.zero_point);
            let mut sums = vec![0i64; cout];
            for t in 0..len {
                for (s, &q) in sums.iter_mut().zip(&a[t * cout..(t + 1) * cout]) {
                    *s += i64::from(q) - zp_a;
                }
            }
            let means: Vec<i64> = sums.iter().map(|&s| div_round_half_even(s, len as i64)).collect();
            let hidden = self.dense_int(li + 1, &means, io[li + 1]);
            let hidden_c: Vec<i64> = hidden.iter().map(|&q| i64::from(q) - i64::from(se_acts.se_hidden.zero_point)).collect();
            let excite = self.dense_int(li + 2, &hidden_c, io[li + 2]);
            let lut = &self.plan.gate_luts[b];
            let gate: Vec<i64> =
                excite.iter().map(|&q| i64::from(lut[(i32::from(q) + 128) as usize]) - i64::from(GATE_PARAMS.zero_point)).collect();

            let m = self.plan.gate_multipliers[b];
            let zp_out = i64::from(se_acts.se_out.zero_point);
            let gated: Vec<i8> = a
                .iter()
                .enumerate()
                .map(|(i, &q)| saturate_i8(zp_out + m.apply((i64::from(q) - zp_a) * gate[i % cout])))
                .collect();

            let out_len = len / cfg.pool_size;
            let mut pooled = Vec::with_capacity(out_len * cout);
            for i in 0..out_len {
                for c in 0..cout {
                    let best = (0..cfg.pool_size).map(|j| gated[(i * cfg.pool_size + j) * cout + c]).max().unwrap();
                    pooled.push(best);
                }
            }
            x = pooled;
            len = out_len;
            cin = cout;
        }
        let nb = cfg.conv_channels.len();
        let centered = |v: &[i8], zp: i32| v.iter().map(|&q| i64::from(q) - i64::from(zp)).collect::<Vec<_>>();
        let flat = centered(&x, self.activations.blocks[nb - 1].se_out.zero_point);
        let h1 = self.dense_int(3 * nb, &flat, io[3 * nb]);
        let h2 = self.dense_int(3 * nb + 1, &centered(&h1, self.activations.dense1.zero_point), io[3 * nb + 1]);
        self.dense_int(3 * nb + 2, &centered(&h2, self.activations.dense2.zero_point), io[3 * nb + 2])[0]
    }

    fn requantize(&self, layer: usize, acc: i64, out: QuantParams, relu: bool) -> i8 {
        let q = i64::from(out.zero_point) + self.plan.multipliers[layer].apply(acc);
        let q = if relu { q.max(i64::from(out.zero_point)) } else { q };
        saturate_i8(q)
    }

    fn conv_int(&self, li: usize, x: &[i8], len: usize, cin: usize, cout: usize, io: (QuantParams, QuantParams, bool)) -> Vec<i8> {
        let (inp, out, relu) = io;
        let k = &self.plan.centered_kernels[li];
        let ks = self.config.kernel_size;
        let pad = (ks - 1) / 2;
        let xc: Vec<i64> = x.iter().map(|&q| i64::from(q) - i64::from(inp.zero_point)).collect();
        let mut y = Vec::with_capacity(len * cout);
        let mut acc = vec![0i64; cout];
        for t in 0..len {
            for (a, &b) in acc.iter_mut().zip(&self.layers[li].bias) {
                *a = i64::from(b);
            }
            for j in 0..ks {
                let Some(src) = (t + j).checked_sub(pad).filter(|&s| s < len) else { continue };
                for ci in 0..cin {
                    let xv = xc[src * cin + ci];
                    if xv == 0 {
                        continue;
                    }
                    let row = &k[(j * cin + ci) * cout..(j * cin + ci + 1) * cout];
                    for (a, &w) in acc.iter_mut().zip(row) {
                        *a += xv * i64::from(w);
                    }
                }
            }
            y.extend(acc.iter().map(|&a| self.requantize(li, a, out, relu)));
        }
        y
    }

    /// Dense layer on centered inputs.
    fn dense_int(&self, li: usize, xc: &[i64], io: (QuantParams, QuantParams, bool)) -> Vec<i8> {
        let (_, out, relu) = io;
        let k = &self.plan.centered_kernels[li];
        let n_out = self.layers[li].bias.len();
        let mut acc: Vec<i64> = self.layers[li].bias.iter().map(|&b| i64::from(b)).collect();
        for (i, &xv) in xc.iter().enumerate() {
            if xv == 0 {
                continue;
            }
            for (a, &w) in acc.iter_mut().zip(&k[i * n_out..(i + 1) * n_out]) {
                *a += xv * i64::from(w);
            }
        }
        acc.iter().map(|&a| self.requantize(li, a, out, relu)).collect()
    }

    /// Quantize a normalized window, run the integer path, then a float
    /// sigmoid on the dequantized logit.
    pub fn forward_q(&self, window: &[f32]) -> Result<f32, ModelError> {
        let expected = self.config.input_size();
        if window.len() != expected {
            return Err(ModelError::ShapeMismatch(format!("input has {} values, expected {expected}", window.len())));
        }
        let input: Vec<i8> = window.iter().map(|&v| self.activations.input.quantize(f64::from(v))).collect();
        let logit = self.activations.logit.dequantize(self.forward_int(&input));
        Ok(clamp_probability(sigmoid(logit)) as f32)
    }
}

fn saturate_i8(q: i64) -> i8 {
    q.clamp(-128, 127) as i8
}

/// Quantize every layer of a float model with calibrated activation params.
pub fn quantize(model: &SeCnn<f32>, activations: ActivationParams, norm: NormStats, metadata: BundleMetadata) -> Result<QModel, QuantError> {
    let io = QModel::layer_io(&activations);
    let params = model.params();
    let layers = params
        .chunks(2)
        .zip(&io)
        .map(|(pair, (inp, _, _))| {
            let (kernel, bias) = (pair[0], pair[1]);
            let (lo, hi) = kernel.iter().fold((0.0f64, 0.0f64), |(lo, hi), &w| (lo.min(f64::from(w)), hi.max(f64::from(w))));
            let kp = QuantParams::from_range(lo, hi);
            let bias_scale = f64::from(inp.scale) * f64::from(kp.scale);
            QLayer {
                kernel: kernel.iter().map(|&w| kp.quantize(f64::from(w))).collect(),
                kernel_params: kp,
                bias: bias
                    .iter()
                    .map(|&b| (f64::from(b) / bias_scale).round_ties_even().clamp(f64::from(i32::MIN), f64::from(i32::MAX)) as i32)
                    .collect(),
            }
        })
        .collect();
    Ok(QModel::build(model.config.clone(), norm, metadata, layers, activations)?)
}

/// Calibrate on `windows` and quantize a float bundle.
pub fn quantize_bundle<W: AsRef<[f32]>>(bundle: &WeightsBundle, windows: &[W]) -> Result<QModel, QuantError> {
    let model = bundle.to_model()?;
    let acts = calibrate(&model, windows)?;
    quantize(&model, acts, bundle.norm, bundle.metadata.clone())
}

#[cfg(test)]
mod tests;
