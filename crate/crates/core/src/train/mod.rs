//! Training: class balance, weighted BCE, minibatch Adam with early stopping,
//! and k-fold cross-validation.

mod adam;
mod backward;
pub mod gradcheck;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use backward::backward_from_logit;

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::daphnet_io::{DatasetSplit, SensorSite};
use crate::dsp::{fit_norm, DspError, FilteredWindow, Label, NormStats, Window};
use crate::eval::{confusion, metrics, Metrics};
use crate::secnn::{build_model, sigmoid, BundleMetadata, ModelConfig, ModelError, Scalar, SeCnn, WeightsBundle};
use crate::seed::{derive_seed, rng_for};

/// Probabilities are clamped to `[BCE_EPSILON, 1 - BCE_EPSILON]` inside the loss.
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training data has a single class ({n_freeze} freeze, {n_nofreeze} no-freeze windows)")]
    SingleClass { n_freeze: usize, n_nofreeze: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("fold {0} has no windows")]
    EmptyFold(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassBalance {
    pub n_freeze: usize,
    pub n_nofreeze: usize,
    pub weight_freeze: f64,
    pub weight_nofreeze: f64,
    /// Initial output-layer bias, `ln(n_freeze / n_nofreeze)`.
    pub output_bias_init: f64,
}

impl ClassBalance {
    pub fn from_counts(n_freeze: usize, n_nofreeze: usize) -> Result<Self, TrainError> {
        if n_freeze == 0 || n_nofreeze == 0 {
            return Err(TrainError::SingleClass { n_freeze, n_nofreeze });
        }
        let total = (n_freeze + n_nofreeze) as f64;
        Ok(Self {
            n_freeze,
            n_nofreeze,
            weight_freeze: total / (2.0 * n_freeze as f64),
            weight_nofreeze: total / (2.0 * n_nofreeze as f64),
            output_bias_init: (n_freeze as f64 / n_nofreeze as f64).ln(),
        })
    }

    pub fn from_labels(labels: impl IntoIterator<Item = Label>) -> Result<Self, TrainError> {
        let (mut f, mut n) = (0, 0);
        for l in labels {
            match l {
                Label::Freeze => f += 1,
                Label::NoFreeze => n += 1,
            }
        }
        Self::from_counts(f, n)
    }

    /// Unit weights and zero bias: plain BCE.
    pub fn unweighted() -> Self {
        Self { n_freeze: 0, n_nofreeze: 0, weight_freeze: 1.0, weight_nofreeze: 1.0, output_bias_init: 0.0 }
    }

    pub fn weight(&self, freeze: bool) -> f64 {
        if freeze {
            self.weight_freeze
        } else {
            self.weight_nofreeze
        }
    }
}

pub fn weighted_bce(p: f64, freeze: bool, balance: &ClassBalance) -> f64 {
    let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    let ll = if freeze { p.ln() } else { (1.0 - p).ln() };
    -balance.weight(freeze) * ll
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Threshold for the per-epoch validation metrics.
    pub eval_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 64, adam: AdamConfig::default(), patience: 10, seed: 0, eval_threshold: 0.4 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let a = &self.adam;
        if self.batch_size == 0 || self.patience == 0 {
            return Err(TrainError::InvalidConfig("batch_size and patience must be positive".into()));
        }
        if !(a.learning_rate > 0.0 && a.epsilon > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(TrainError::InvalidConfig(format!("bad Adam parameters {a:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metrics: Metrics,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainHistory {
    /// `epoch,train_loss,val_loss,val_f1`. Wall-clock is left out so the
    /// file is reproducible.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_f1\n");
        for e in &self.epochs {
            let f1 = e.val_metrics.f1.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(out, "{},{:.6},{:.6},{f1}", e.epoch, e.train_loss, e.val_loss);
        }
        out
    }
}

/// Mean weighted BCE over `inputs` and its gradient with respect to every
/// trainable tensor. With `dropout_rng` the forward pass is in training mode.
pub fn loss_and_grad<T: Scalar, R: Rng>(
    model: &SeCnn<T>,
    inputs: &[(&[T], bool)],
    balance: &ClassBalance,
    mut dropout_rng: Option<&mut R>,
) -> (f64, SeCnn<T>) {
    let mut grads = model.zeros_like();
    let mut loss = 0.0;
    let inv_n = 1.0 / inputs.len().max(1) as f64;
    for &(x, y) in inputs {
        let trace = model.forward_trace(x, dropout_rng.as_deref_mut());
        let p = sigmoid(trace.logit).to_f64().unwrap();
        loss += weighted_bce(p, y, balance) * inv_n;
        let target = if y { 1.0 } else { 0.0 };
        let dlogit = balance.weight(y) * (p - target) * inv_n;
        backward_from_logit(model, &trace, T::lit(dlogit), &mut grads);
    }
    (loss, grads)
}

/// Inference probabilities for a set of windows (dropout off).
pub fn predict(model: &SeCnn<f32>, windows: &[Window]) -> Vec<f64> {
    windows.iter().map(|w| f64::from(model.forward_trace::<rand_chacha::ChaCha8Rng>(&w.data, None).probability)).collect()
}

fn mean_loss(probs: &[f64], windows: &[Window], balance: &ClassBalance) -> f64 {
    let n = probs.len().max(1) as f64;
    probs.iter().zip(windows).map(|(&p, w)| weighted_bce(p, w.label.is_freeze(), balance)).sum::<f64>() / n
}

fn labels(windows: &[Window]) -> Vec<bool> {
    windows.iter().map(|w| w.label.is_freeze()).collect()
}

/// Train one model. The init seed is `cfg.seed`; windows must already be
/// normalized with `norm` (fit on `train` only). Returns the weights with the
/// lowest validation loss.
pub fn train_fold(
    train: &[Window],
    val: &[Window],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    balance: &ClassBalance,
    norm: NormStats,
    metadata: BundleMetadata,
) -> Result<(WeightsBundle, TrainHistory), TrainError> {
    cfg.validate()?;
    let model_cfg = ModelConfig { seed: cfg.seed, ..model_cfg.clone() };
    let mut model = build_model::<f32>(&model_cfg)?;
    model.set_output_bias(balance.output_bias_init);
    let metadata = BundleMetadata { training_seed: cfg.seed, ..metadata };
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok((WeightsBundle::from_model(&model, norm, metadata), history));
    }
    if train.is_empty() {
        return Err(TrainError::EmptyFold(0));
    }
    if val.is_empty() {
        return Err(TrainError::EmptyFold(1));
    }
    for w in train.iter().chain(val) {
        model.check_input(&w.data)?;
    }

    let mut shuffle_rng = rng_for(cfg.seed, "shuffle", &[]);
    let mut dropout_rng = rng_for(cfg.seed, "dropout", &[]);
    let mut adam = AdamState::new(&model.params());
    let val_labels = labels(val);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::INFINITY, model.clone());
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut train_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let inputs: Vec<(&[f32], bool)> = batch.iter().map(|&i| (&train[i].data[..], train[i].label.is_freeze())).collect();
            let (loss, grads) = loss_and_grad(&model, &inputs, balance, Some(&mut dropout_rng));
            train_loss += loss * batch.len() as f64;
            adam_step(model.params_mut(), &grads.params(), &mut adam, &cfg.adam);
        }
        train_loss /= train.len() as f64;

        let probs = predict(&model, val);
        let val_loss = mean_loss(&probs, val, balance);
        let val_metrics = metrics(&confusion(&probs, &val_labels, cfg.eval_threshold).expect("equal lengths"));
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_metrics,
            wall_ms: started.elapsed().as_millis() as u64,
        });

        if val_loss < best.0 {
            best = (val_loss, model.clone());
            history.best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }
    Ok((WeightsBundle::from_model(&best.1, norm, metadata), history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub bundle: WeightsBundle,
    pub history: TrainHistory,
    pub balance: ClassBalance,
    /// Window indices (into the cross-validated set) of the held-out fold.
    pub val_indices: Vec<usize>,
    pub val_probs: Vec<f64>,
    pub val_labels: Vec<bool>,
    pub val_metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub site: SensorSite,
    pub folds: Vec<FoldResult>,
    /// Mean of the per-fold validation metrics.
    pub aggregate: Metrics,
    pub test_indices: Vec<usize>,
    /// Mean probability of the fold models on each test window.
    pub test_probs: Vec<f64>,
    pub test_labels: Vec<bool>,
}

impl CrossValidation {
    /// Out-of-fold probabilities and labels over every non-test window,
    /// ordered by window index.
    pub fn out_of_fold(&self) -> (Vec<f64>, Vec<bool>) {
        let mut rows: Vec<(usize, f64, bool)> = self
            .folds
            .iter()
            .flat_map(|f| f.val_indices.iter().zip(&f.val_probs).zip(&f.val_labels).map(|((&i, &p), &y)| (i, p, y)))
            .collect();
        rows.sort_by_key(|r| r.0);
        (rows.iter().map(|r| r.1).collect(), rows.iter().map(|r| r.2).collect())
    }
}

/// Per-fold seed for a site model.
pub fn fold_seed(seed: u64, site: SensorSite, fold: usize) -> u64 {
    derive_seed(seed, "model", &[site.index() as u64, fold as u64])
}

fn normalized(windows: &[FilteredWindow], idx: &[usize], norm: &NormStats) -> Vec<Window> {
    idx.iter().map(|&i| windows[i].normalize(norm)).collect()
}

/// k-fold training on one site's windows. Normalization and class balance
/// of each fold come from its training folds only. Folds train in parallel;
/// each derives its own seed from `cfg.seed`, site and fold id.
pub fn cross_validate(
    windows: &[FilteredWindow],
    split: &DatasetSplit,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    site: SensorSite,
) -> Result<CrossValidation, TrainError> {
    assert_eq!(windows.len(), split.assignments.len(), "split does not match the window set");
    let folds: Vec<FoldResult> = (0..split.fold_count)
        .into_par_iter()
        .map(|fold| -> Result<FoldResult, TrainError> {
            let train_idx = split.train_indices(fold);
            let val_idx = split.fold_indices(fold);
            if train_idx.is_empty() || val_idx.is_empty() {
                return Err(TrainError::EmptyFold(fold));
            }
            let norm = fit_norm(train_idx.iter().flat_map(|&i| windows[i].samples.iter()))?;
            let balance = ClassBalance::from_labels(train_idx.iter().map(|&i| windows[i].label))?;
            let train = normalized(windows, &train_idx, &norm);
            let val = normalized(windows, &val_idx, &norm);
            let fold_cfg = TrainConfig { seed: fold_seed(cfg.seed, site, fold), ..cfg.clone() };
            let meta = BundleMetadata { site: Some(site), fold_id: Some(fold as u32), training_seed: 0 };
            let (bundle, history) = train_fold(&train, &val, model_cfg, &fold_cfg, &balance, norm, meta)?;
            let model = bundle.to_model()?;
            let val_probs = predict(&model, &val);
            let val_labels = labels(&val);
            let val_metrics = metrics(&confusion(&val_probs, &val_labels, cfg.eval_threshold).expect("equal lengths"));
            Ok(FoldResult { fold, bundle, history, balance, val_indices: val_idx, val_probs, val_labels, val_metrics })
        })
        .collect::<Result<_, _>>()?;

    let aggregate = crate::eval::mean_metrics(&folds.iter().map(|f| f.val_metrics).collect::<Vec<_>>());
    let test_indices = split.test_indices();
    let mut test_probs = vec![0.0; test_indices.len()];
    for f in &folds {
        let model = f.bundle.to_model()?;
        let test = normalized(windows, &test_indices, &f.bundle.norm);
        for (acc, p) in test_probs.iter_mut().zip(predict(&model, &test)) {
            *acc += p / folds.len() as f64;
        }
    }
    let test_labels = test_indices.iter().map(|&i| windows[i].label.is_freeze()).collect();
    Ok(CrossValidation { site, folds, aggregate, test_indices, test_probs, test_labels })
}

#[cfg(test)]
mod tests;
