//! Report rendering. Output is a pure function of the inputs: fixed
//! decimal formatting, no timestamps.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Metrics, RocCurve};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    /// How the operating point was chosen, e.g. `fixed` or `youden`.
    pub operating_point: String,
    pub threshold: f64,
    pub metrics: Metrics,
    pub auc: Option<f64>,
    pub param_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub site: String,
    pub fold: usize,
    pub threshold: f64,
    pub metrics: Metrics,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub folds: Vec<FoldRow>,
    pub curves: Vec<(String, RocCurve)>,
    pub notes: Vec<String>,
}

/// Published results for comparison (reported, not reproduced):
/// (model, year, accuracy, sensitivity, specificity, F1, parameters), in percent.
pub const REFERENCE_ROWS: [(&str, u32, Option<f64>, Option<f64>, Option<f64>, Option<f64>, Option<&str>); 8] = [
    ("SVM, wrist sensor", 2017, Some(83.66), Some(88.09), Some(80.09), None, None),
    ("CNN+MLP", 2019, None, Some(92.3), Some(92.8), Some(94.8), Some("5,001,273")),
    ("1D CNN", 2020, None, Some(83.77), Some(81.78), None, None),
    ("Random forest", 2020, None, Some(87.8), Some(87.6), None, Some("298,500")),
    ("Squeeze-and-excite CNN", 2021, Some(95.66), Some(95.66), None, Some(95.56), Some("32,450")),
    ("SVM", 2022, Some(88.0), Some(85.14), Some(88.38), Some(86.73), None),
    ("SE-CNN + majority voting, float", 2022, Some(83.00), Some(85.40), Some(82.70), Some(85.50), Some("19,995 per node")),
    ("SE-CNN + majority voting, embedded", 2022, Some(81.48), Some(88.80), Some(80.71), Some(85.34), Some("19,995 per node")),
];

const UNDEFINED: &str = "n/a";

fn fmt_ratio(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| format!("{x:.4}"))
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| format!("{:.2}%", x * 100.0))
}

pub fn render_metrics_csv(report: &Report) -> String {
    let mut out = String::from("scope,name,operating_point,threshold,accuracy,sensitivity,specificity,f1,auc,param_count\n");
    for r in &report.rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "summary,{},{},{:.4},{},{},{},{},{},{}",
            r.name,
            r.operating_point,
            r.threshold,
            fmt_ratio(m.accuracy),
            fmt_ratio(m.sensitivity),
            fmt_ratio(m.specificity),
            fmt_ratio(m.f1),
            fmt_ratio(r.auc),
            r.param_count.map_or_else(|| UNDEFINED.to_string(), |p| p.to_string()),
        );
    }
    for f in &report.folds {
        let m = &f.metrics;
        let _ = writeln!(
            out,
            "fold,{}-fold{},validation,{:.4},{},{},{},{},{},{}",
            f.site,
            f.fold,
            f.threshold,
            fmt_ratio(m.accuracy),
            fmt_ratio(m.sensitivity),
            fmt_ratio(m.specificity),
            fmt_ratio(m.f1),
            fmt_ratio(f.auc),
            UNDEFINED,
        );
    }
    out
}

/// `curve,threshold,tpr,fpr` rows for external plotting.
pub fn render_roc_csv(report: &Report) -> String {
    let mut out = String::from("curve,threshold,tpr,fpr\n");
    for (name, curve) in &report.curves {
        for p in &curve.points {
            let _ = writeln!(out, "{name},{:.6},{:.6},{:.6}", p.threshold, p.tpr, p.fpr);
        }
    }
    out
}

pub fn render_markdown(report: &Report) -> String {
    let mut out = String::from("# Freezing-of-gait detection: evaluation report\n\n");
    out.push_str("## This run\n\n");
    out.push_str("| Model | Operating point | Threshold | Accuracy | Sensitivity | Specificity | F1 | AUC | # Trainable parameters |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for r in &report.rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "| {} | {} | {:.3} | {} | {} | {} | {} | {} | {} |",
            r.name,
            r.operating_point,
            r.threshold,
            fmt_pct(m.accuracy),
            fmt_pct(m.sensitivity),
            fmt_pct(m.specificity),
            fmt_pct(m.f1),
            fmt_ratio(r.auc),
            r.param_count.map_or_else(|| UNDEFINED.to_string(), |p| p.to_string()),
        );
    }
    if !report.folds.is_empty() {
        out.push_str("\n## Cross-validation folds (validation split)\n\n");
        out.push_str("| Site | Fold | Threshold | Accuracy | Sensitivity | Specificity | F1 | AUC |\n");
        out.push_str("|---|---|---|---|---|---|---|---|\n");
        for f in &report.folds {
            let m = &f.metrics;
            let _ = writeln!(
                out,
                "| {} | {} | {:.3} | {} | {} | {} | {} | {} |",
                f.site,
                f.fold,
                f.threshold,
                fmt_pct(m.accuracy),
                fmt_pct(m.sensitivity),
                fmt_pct(m.specificity),
                fmt_pct(m.f1),
                fmt_ratio(f.auc),
            );
        }
    }
    out.push_str("\n## Published reference values (reported, not reproduced)\n\n");
    out.push_str("| Model | Year | Accuracy | Sensitivity | Specificity | F1 | # Trainable parameters |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    let pct = |v: Option<f64>| v.map_or_else(|| UNDEFINED.to_string(), |x| format!("{x:.2}%"));
    for (name, year, acc, sens, spec, f1, params) in REFERENCE_ROWS {
        let _ = writeln!(
            out,
            "| {name} | {year} | {} | {} | {} | {} | {} |",
            pct(acc),
            pct(sens),
            pct(spec),
            pct(f1),
            params.unwrap_or(UNDEFINED)
        );
    }
    if !report.notes.is_empty() {
        out.push_str("\n## Notes\n\n");
        for n in &report.notes {
            let _ = writeln!(out, "- {n}");
        }
    }
    out
}
