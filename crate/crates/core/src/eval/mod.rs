//! Window-level metrics, ROC curves and threshold selection.
//!
//! A prediction is positive iff `p > threshold` (strict), the same boundary
//! rule the central vote uses.

mod report;

pub use report::{render_markdown, render_metrics_csv, render_roc_csv, FoldRow, Report, ReportRow, REFERENCE_ROWS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{probs} probabilities but {labels} labels")]
    LengthMismatch { probs: usize, labels: usize },
    #[error("{0} is undefined (zero denominator)")]
    UndefinedMetric(&'static str),
    #[error("ROC needs both classes present")]
    SingleClass,
    #[error("empty threshold grid")]
    EmptyGrid,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio(num: u64, den: u64, name: &'static str) -> Result<f64, EvalError> {
    if den == 0 {
        Err(EvalError::UndefinedMetric(name))
    } else {
        Ok(num as f64 / den as f64)
    }
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn accuracy(&self) -> Result<f64, EvalError> {
        ratio(self.tp + self.tn, self.total(), "accuracy")
    }

    pub fn sensitivity(&self) -> Result<f64, EvalError> {
        ratio(self.tp, self.tp + self.fn_, "sensitivity")
    }

    pub fn specificity(&self) -> Result<f64, EvalError> {
        ratio(self.tn, self.tn + self.fp, "specificity")
    }

    pub fn precision(&self) -> Result<f64, EvalError> {
        ratio(self.tp, self.tp + self.fp, "precision")
    }

    pub fn f1(&self) -> Result<f64, EvalError> {
        ratio(2 * self.tp, 2 * self.tp + self.fn_ + self.fp, "f1")
    }
}

/// Metric values; `None` marks an undefined metric (zero denominator).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    Metrics {
        accuracy: c.accuracy().ok(),
        sensitivity: c.sensitivity().ok(),
        specificity: c.specificity().ok(),
        f1: c.f1().ok(),
    }
}

/// Mean over the runs where each metric is defined.
pub fn mean_metrics(all: &[Metrics]) -> Metrics {
    let mean = |f: fn(&Metrics) -> Option<f64>| {
        let vals: Vec<f64> = all.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Metrics {
        accuracy: mean(|m| m.accuracy),
        sensitivity: mean(|m| m.sensitivity),
        specificity: mean(|m| m.specificity),
        f1: mean(|m| m.f1),
    }
}

pub fn confusion(probs: &[f64], labels: &[bool], threshold: f64) -> Result<ConfusionCounts, EvalError> {
    if probs.len() != labels.len() {
        return Err(EvalError::LengthMismatch { probs: probs.len(), labels: labels.len() });
    }
    let mut c = ConfusionCounts::default();
    for (&p, &y) in probs.iter().zip(labels) {
        c.add(p > threshold, y);
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

impl RocPoint {
    pub fn youden_j(&self) -> f64 {
        self.tpr - self.fpr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Thresholds strictly decreasing, so `fpr` and `tpr` are non-decreasing.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// `n` evenly spaced thresholds covering `[0, 1]`.
pub fn default_grid(n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

pub const DEFAULT_GRID_POINTS: usize = 201;

pub fn roc(probs: &[f64], labels: &[bool], grid: &[f64]) -> Result<RocCurve, EvalError> {
    if probs.len() != labels.len() {
        return Err(EvalError::LengthMismatch { probs: probs.len(), labels: labels.len() });
    }
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let mut thresholds = grid.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    // Sweep scores in descending order alongside the thresholds.
    let mut scored: Vec<(f64, bool)> = probs.iter().copied().zip(labels.iter().copied()).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut fp, mut k) = (0usize, 0usize, 0usize);
    let mut points = Vec::with_capacity(thresholds.len());
    for &t in &thresholds {
        while k < scored.len() && scored[k].0 > t {
            if scored[k].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint { threshold: t, tpr: tp as f64 / pos as f64, fpr: fp as f64 / neg as f64 });
    }
    let auc = trapezoid_auc(&points);
    Ok(RocCurve { points, auc })
}

/// ROC with one threshold per distinct score plus one below the minimum:
/// the exact empirical curve.
pub fn roc_exact(probs: &[f64], labels: &[bool]) -> Result<RocCurve, EvalError> {
    let mut grid: Vec<f64> = probs.to_vec();
    if let Some(min) = probs.iter().copied().reduce(f64::min) {
        grid.push(min - 1.0);
    }
    roc(probs, labels, &grid)
}

/// Trapezoidal area, anchored at (0,0) and (1,1).
fn trapezoid_auc(points: &[RocPoint]) -> f64 {
    let mut curve = Vec::with_capacity(points.len() + 2);
    curve.push((0.0, 0.0));
    curve.extend(points.iter().map(|p| (p.fpr, p.tpr)));
    curve.push((1.0, 1.0));
    curve.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

/// Threshold maximizing Youden's J; ties go to the lowest threshold.
pub fn best_threshold(curve: &RocCurve) -> f64 {
    let mut best: Option<RocPoint> = None;
    for p in &curve.points {
        best = match best {
            None => Some(*p),
            Some(b) if p.youden_j() > b.youden_j() => Some(*p),
            Some(b) if p.youden_j() == b.youden_j() && p.threshold < b.threshold => Some(*p),
            keep => keep,
        };
    }
    best.expect("non-empty ROC curve").threshold
}
