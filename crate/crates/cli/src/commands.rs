//! The subcommands. Each takes a resolved [`RunConfig`], owns its output
//! directory for the duration of the call and returns a summary that the
//! binary prints and tests inspect.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fogmesh_core::daphnet_io::{make_split, make_subject_split, DatasetSplit, SensorSite, SubjectRecording};
use fogmesh_core::dsp::{site_windows, FilteredWindow, Label, Window};
use fogmesh_core::eval::{
    best_threshold, confusion, default_grid, metrics, render_markdown, render_metrics_csv, render_roc_csv, roc, FoldRow, Metrics,
    Report, ReportRow, RocCurve, DEFAULT_GRID_POINTS,
};
use fogmesh_core::nodesim::{run_simulation, NodeModel, SimSummary};
use fogmesh_core::quant::{quantize_bundle, QModel, QMODEL_MAGIC};
use fogmesh_core::secnn::{count_params, WeightsBundle};
use fogmesh_core::train::{cross_validate, predict};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache;
use crate::config::{load_sim_input, RunConfig};
use crate::error::{CliError, Result};
use crate::output::{read, read_json, sha256_hex, OutputDir, RunManifest};

pub const SPLIT_FILE: &str = "split.json";
pub const BALANCE_FILE: &str = "class_balance.json";
pub const SIM_SUMMARY_FILE: &str = "sim_summary.json";
pub const TRACE_FILE: &str = "trace.ndjson";
pub const EVAL_FILE: &str = "eval.json";

/// Largest tolerated quantized-vs-float AUC gap under `--strict`.
pub const MAX_AUC_GAP: f64 = 0.02;

pub fn cache_rel(site: SensorSite) -> String {
    format!("cache/{site}.fogc")
}

pub fn model_rel(site: SensorSite, fold: usize, ext: &str) -> String {
    format!("models/{site}_fold{fold}.{ext}")
}

fn history_rel(site: SensorSite, fold: usize) -> String {
    format!("history/{site}_fold{fold}.csv")
}

fn finish(out: &mut OutputDir, command: &str, cfg: &RunConfig, inputs: BTreeMap<String, String>, started: Instant) -> Result<()> {
    out.write_json(&format!("{command}.config.json"), cfg)?;
    let manifest = RunManifest::new(command, cfg.hash(), inputs, out, started.elapsed().as_secs_f64());
    out.write_json(&format!("{command}.manifest.json"), &manifest)?;
    Ok(())
}

fn missing(what: &Path, hint: &str) -> CliError {
    CliError::Usage(format!("{} not found; {hint}", what.display()))
}

// ---------------------------------------------------------------- preprocess

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub freeze: usize,
    pub no_freeze: usize,
}

impl ClassCounts {
    fn add(&mut self, label: Label) {
        match label {
            Label::Freeze => self.freeze += 1,
            Label::NoFreeze => self.no_freeze += 1,
        }
    }
}

/// Window counts; labels are shared by all sites, so one table covers them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BalanceSummary {
    pub windows: usize,
    pub total: ClassCounts,
    pub subjects: BTreeMap<u32, ClassCounts>,
}

pub fn preprocess(cfg: &RunConfig) -> Result<BalanceSummary> {
    let started = Instant::now();
    let recordings = cfg.load_recordings()?;
    let mut out = OutputDir::lock(&cfg.out_dir)?;
    let inputs = recording_checksums(&recordings);

    let mut per_site: BTreeMap<SensorSite, Vec<FilteredWindow>> = BTreeMap::new();
    for site in SensorSite::ALL {
        let windows: Vec<FilteredWindow> = recordings.par_iter().flat_map(|r| site_windows(r, site, &cfg.pipeline)).collect();
        per_site.insert(site, windows);
    }
    let reference = &per_site[&SensorSite::Ankle];
    let mut balance = BalanceSummary { windows: reference.len(), ..Default::default() };
    for w in reference {
        balance.total.add(w.label);
        balance.subjects.entry(w.subject_id).or_default().add(w.label);
    }
    for (subject, c) in &balance.subjects {
        if c.freeze == 0 || c.no_freeze == 0 {
            eprintln!("warning: subject {subject} has {} freeze and {} no-freeze windows", c.freeze, c.no_freeze);
        }
    }

    let split = if cfg.subject_wise {
        let subjects: Vec<u32> = reference.iter().map(|w| w.subject_id).collect();
        make_subject_split(&subjects, cfg.fold_count, cfg.test_fraction, cfg.seed)?
    } else {
        make_split(reference.len(), cfg.fold_count, cfg.test_fraction, cfg.seed)?
    };
    for (site, windows) in &per_site {
        out.write(&cache_rel(*site), &cache::encode(*site, cfg.pipeline.windowing.window_len, windows))?;
    }
    out.write_json(SPLIT_FILE, &split)?;
    out.write_json(BALANCE_FILE, &balance)?;
    finish(&mut out, "preprocess", cfg, inputs, started)?;
    Ok(balance)
}

fn recording_checksums(recordings: &[SubjectRecording]) -> BTreeMap<String, String> {
    recordings
        .iter()
        .map(|r| (format!("S{:02}R{:02}", r.subject_id, r.trial_id), sha256_hex(r.to_daphnet_text().as_bytes())))
        .collect()
}

/// Window caches and split written by `preprocess`.
pub struct Prepared {
    pub windows: BTreeMap<SensorSite, Vec<FilteredWindow>>,
    pub split: DatasetSplit,
    pub inputs: BTreeMap<String, String>,
}

pub fn load_prepared(cfg: &RunConfig) -> Result<Prepared> {
    let hint = "run `fogmesh preprocess` with the same --out first";
    let mut inputs = BTreeMap::new();
    let split_path = cfg.out_dir.join(SPLIT_FILE);
    if !split_path.exists() {
        return Err(missing(&split_path, hint));
    }
    inputs.insert(SPLIT_FILE.to_string(), sha256_hex(&read(&split_path)?));
    let split: DatasetSplit = read_json(&split_path)?;
    let mut windows = BTreeMap::new();
    for site in SensorSite::ALL {
        let path = cfg.out_dir.join(cache_rel(site));
        if !path.exists() {
            return Err(missing(&path, hint));
        }
        let bytes = read(&path)?;
        inputs.insert(cache_rel(site), sha256_hex(&bytes));
        let (found, w) = cache::decode(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if found != site || w.len() != split.assignments.len() {
            return Err(CliError::Usage(format!("{} does not match {}", path.display(), split_path.display())));
        }
        if w.first().is_some_and(|w| w.samples.len() != cfg.model.input_len) {
            return Err(CliError::Usage(format!("{} holds windows of another length than the model input", path.display())));
        }
        windows.insert(site, w);
    }
    Ok(Prepared { windows, split, inputs })
}

// --------------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    /// Mean validation metrics over the folds of each site.
    pub sites: BTreeMap<SensorSite, Metrics>,
    pub folds: Vec<FoldRow>,
}

pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    let started = Instant::now();
    let prepared = load_prepared(cfg)?;
    let mut out = OutputDir::lock(&cfg.out_dir)?;
    let mut summary = TrainSummary { sites: BTreeMap::new(), folds: Vec::new() };
    let mut report = Report::default();
    for site in SensorSite::ALL {
        let t = Instant::now();
        let cv = cross_validate(&prepared.windows[&site], &prepared.split, &cfg.model, &cfg.training, site)?;
        eprintln!("trained {site}: {} folds in {:.1} s", cv.folds.len(), t.elapsed().as_secs_f64());
        for f in &cv.folds {
            out.write(&model_rel(site, f.fold, "fogw"), &f.bundle.to_bytes())?;
            out.write(&history_rel(site, f.fold), f.history.to_csv().as_bytes())?;
            let row = FoldRow {
                site: site.to_string(),
                fold: f.fold,
                threshold: cfg.training.eval_threshold,
                metrics: f.val_metrics,
                auc: roc(&f.val_probs, &f.val_labels, &default_grid(DEFAULT_GRID_POINTS)).ok().map(|c| c.auc),
            };
            summary.folds.push(row.clone());
            report.folds.push(row);
        }
        let params = cv.folds.first().map(|f| f.bundle.param_count());
        report.rows.push(ReportRow {
            name: format!("float, {site}, mean over folds"),
            operating_point: "fixed".into(),
            threshold: cfg.training.eval_threshold,
            metrics: cv.aggregate,
            auc: None,
            param_count: params,
        });
        summary.sites.insert(site, cv.aggregate);
    }
    out.write("fold_metrics.csv", render_metrics_csv(&report).as_bytes())?;
    finish(&mut out, "train", cfg, prepared.inputs, started)?;
    Ok(summary)
}

/// `bundles[site][fold]` from the output directory.
pub fn load_bundles(cfg: &RunConfig, fold_count: usize, inputs: &mut BTreeMap<String, String>) -> Result<BTreeMap<SensorSite, Vec<WeightsBundle>>> {
    let mut all = BTreeMap::new();
    for site in SensorSite::ALL {
        let mut folds = Vec::with_capacity(fold_count);
        for fold in 0..fold_count {
            let path = cfg.out_dir.join(model_rel(site, fold, "fogw"));
            if !path.exists() {
                return Err(missing(&path, "run `fogmesh train` with the same --out first"));
            }
            let bytes = read(&path)?;
            inputs.insert(model_rel(site, fold, "fogw"), sha256_hex(&bytes));
            let b = WeightsBundle::from_bytes(&bytes).map_err(|source| CliError::Artifact { path: path.clone(), source })?;
            b.check_config(&cfg.model).map_err(|source| CliError::Artifact { path, source })?;
            folds.push(b);
        }
        all.insert(site, folds);
    }
    Ok(all)
}

// ------------------------------------------------------------------ quantize

/// Evenly spaced training-fold windows, normalized for the fold's model.
fn calibration_set(cfg: &RunConfig, windows: &[FilteredWindow], split: &DatasetSplit, fold: usize, bundle: &WeightsBundle) -> Vec<Vec<f32>> {
    let train = split.train_indices(fold);
    let m = cfg.calibration_windows.min(train.len());
    (0..m).map(|i| windows[train[i * train.len() / m]].normalize(&bundle.norm).data).collect()
}

fn quantize_all(
    cfg: &RunConfig,
    prepared: &Prepared,
    bundles: &BTreeMap<SensorSite, Vec<WeightsBundle>>,
) -> Result<BTreeMap<SensorSite, Vec<QModel>>> {
    let mut all = BTreeMap::new();
    for (site, folds) in bundles {
        let q: Vec<QModel> = folds
            .par_iter()
            .enumerate()
            .map(|(fold, b)| {
                let calib = calibration_set(cfg, &prepared.windows[site], &prepared.split, fold, b);
                quantize_bundle(b, &calib)
            })
            .collect::<Result<_, _>>()?;
        all.insert(*site, q);
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizeSummary {
    pub models: usize,
    pub float_bytes: usize,
    pub quantized_bytes: usize,
}

pub fn quantize(cfg: &RunConfig) -> Result<QuantizeSummary> {
    let started = Instant::now();
    let mut prepared = load_prepared(cfg)?;
    let bundles = load_bundles(cfg, prepared.split.fold_count, &mut prepared.inputs)?;
    let mut out = OutputDir::lock(&cfg.out_dir)?;
    let qmodels = quantize_all(cfg, &prepared, &bundles)?;
    let mut summary = QuantizeSummary { models: 0, float_bytes: 0, quantized_bytes: 0 };
    for (site, folds) in &qmodels {
        for (fold, q) in folds.iter().enumerate() {
            let bytes = q.to_bytes();
            summary.models += 1;
            summary.float_bytes += bundles[site][fold].to_bytes().len();
            summary.quantized_bytes += bytes.len();
            out.write(&model_rel(*site, fold, "fogq"), &bytes)?;
        }
    }
    finish(&mut out, "quantize", cfg, prepared.inputs, started)?;
    Ok(summary)
}

fn load_qmodels(cfg: &RunConfig, fold_count: usize) -> Result<Option<BTreeMap<SensorSite, Vec<QModel>>>> {
    let mut all = BTreeMap::new();
    for site in SensorSite::ALL {
        let mut folds = Vec::new();
        for fold in 0..fold_count {
            let path = cfg.out_dir.join(model_rel(site, fold, "fogq"));
            if !path.exists() {
                return Ok(None);
            }
            let q = QModel::from_bytes(&read(&path)?).map_err(|source| CliError::Artifact { path, source })?;
            folds.push(q);
        }
        all.insert(site, folds);
    }
    Ok(Some(all))
}

// ------------------------------------------------------------------ evaluate

/// Probabilities of one model family over the cross-validation windows
/// (out of fold) and the test windows (mean over fold models).
#[derive(Debug, Clone, Default)]
pub struct Scores {
    pub oof: BTreeMap<SensorSite, Vec<f64>>,
    pub test: BTreeMap<SensorSite, Vec<f64>>,
}

/// Window labels in the order [`Scores`] uses.
pub struct Labels {
    pub oof_indices: Vec<usize>,
    pub oof: Vec<bool>,
    pub test: Vec<bool>,
}

fn labels(prepared: &Prepared) -> Labels {
    let w = &prepared.windows[&SensorSite::Ankle];
    let oof_indices: Vec<usize> = (0..prepared.split.fold_count).flat_map(|k| prepared.split.fold_indices(k)).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    Labels {
        oof: oof_indices.iter().map(|&i| w[i].label.is_freeze()).collect(),
        test: prepared.split.test_indices().iter().map(|&i| w[i].label.is_freeze()).collect(),
        oof_indices,
    }
}

fn score<M: Sync>(
    prepared: &Prepared,
    models: &BTreeMap<SensorSite, Vec<M>>,
    norm_of: impl Fn(&M) -> fogmesh_core::dsp::NormStats + Sync,
    run: impl Fn(&M, &[Window]) -> Result<Vec<f64>> + Sync,
) -> Result<Scores> {
    let split = &prepared.split;
    let test_idx = split.test_indices();
    let mut scores = Scores::default();
    for (site, folds) in models {
        let windows = &prepared.windows[site];
        let norm_windows = |idx: &[usize], m: &M| -> Vec<Window> { idx.iter().map(|&i| windows[i].normalize(&norm_of(m))).collect() };
        let per_fold: Vec<(Vec<usize>, Vec<f64>, Vec<f64>)> = folds
            .par_iter()
            .enumerate()
            .map(|(k, m)| {
                let val = split.fold_indices(k);
                let p_val = run(m, &norm_windows(&val, m))?;
                let p_test = run(m, &norm_windows(&test_idx, m))?;
                Ok((val, p_val, p_test))
            })
            .collect::<Result<_>>()?;
        let mut by_index: BTreeMap<usize, f64> = BTreeMap::new();
        let mut test = vec![0.0; test_idx.len()];
        for (val, p_val, p_test) in &per_fold {
            by_index.extend(val.iter().copied().zip(p_val.iter().copied()));
            for (acc, p) in test.iter_mut().zip(p_test) {
                *acc += p / folds.len() as f64;
            }
        }
        scores.oof.insert(*site, by_index.into_values().collect());
        scores.test.insert(*site, test);
    }
    Ok(scores)
}

fn float_scores(prepared: &Prepared, bundles: &BTreeMap<SensorSite, Vec<WeightsBundle>>) -> Result<Scores> {
    let models: BTreeMap<SensorSite, Vec<(WeightsBundle, fogmesh_core::SeCnn<f32>)>> = bundles
        .iter()
        .map(|(s, f)| Ok((*s, f.iter().map(|b| Ok((b.clone(), b.to_model()?))).collect::<Result<_>>()?)))
        .collect::<Result<_>>()?;
    score(prepared, &models, |m| m.0.norm, |m, w| Ok(predict(&m.1, w)))
}

fn quant_scores(prepared: &Prepared, qmodels: &BTreeMap<SensorSite, Vec<QModel>>) -> Result<Scores> {
    score(prepared, qmodels, |q| q.norm, |q, w| {
        w.iter().map(|w| Ok(f64::from(q.forward_q(&w.data)?))).collect()
    })
}

/// Per-window vote score: the second-largest site probability. "At least
/// `quorum` of 3 above t" holds exactly when this score is above t (quorum 2).
pub fn vote_score(per_site: &BTreeMap<SensorSite, Vec<f64>>, quorum: usize) -> Vec<f64> {
    let n = per_site.values().next().map_or(0, Vec::len);
    (0..n)
        .map(|i| {
            let mut ps: Vec<f64> = per_site.values().map(|v| v[i]).collect();
            ps.sort_by(|a, b| b.total_cmp(a));
            ps.get(quorum.saturating_sub(1)).copied().unwrap_or(0.0)
        })
        .collect()
}

fn pooled(per_site: &BTreeMap<SensorSite, Vec<f64>>) -> Vec<f64> {
    per_site.values().flatten().copied().collect()
}

fn repeat_labels(labels: &[bool], times: usize) -> Vec<bool> {
    (0..times).flat_map(|_| labels.iter().copied()).collect()
}

/// Rows at the fixed threshold and at the Youden threshold, plus the curve.
fn rows_for(name: &str, probs: &[f64], labels: &[bool], fixed: f64, params: Option<usize>) -> Result<(Vec<ReportRow>, RocCurve)> {
    let curve = roc(probs, labels, &default_grid(DEFAULT_GRID_POINTS))?;
    let best = best_threshold(&curve);
    let row = |op: &str, t: f64| -> Result<ReportRow> {
        Ok(ReportRow {
            name: name.to_string(),
            operating_point: op.to_string(),
            threshold: t,
            metrics: metrics(&confusion(probs, labels, t)?),
            auc: Some(curve.auc),
            param_count: params,
        })
    };
    Ok((vec![row("fixed", fixed)?, row("youden", best)?], curve))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Float majority vote over cross-validation windows at the Youden threshold.
    pub headline: ReportRow,
    pub float_test_auc: f64,
    pub quantized_test_auc: f64,
    pub auc_gap: f64,
    /// Fraction of test windows (all sites) where float and int8 models
    /// agree on the class at the fixed threshold.
    pub class_agreement: f64,
    pub test_windows: usize,
    pub rows: Vec<ReportRow>,
}

/// Target band for the float majority vote.
pub const TARGET_SENSITIVITY: f64 = 0.80;
pub const TARGET_F1: f64 = 0.80;

pub fn evaluate(cfg: &RunConfig, strict: bool) -> Result<EvalSummary> {
    let started = Instant::now();
    let mut prepared = load_prepared(cfg)?;
    let bundles = load_bundles(cfg, prepared.split.fold_count, &mut prepared.inputs)?;
    let mut out = OutputDir::lock(&cfg.out_dir)?;
    let qmodels = match load_qmodels(cfg, prepared.split.fold_count)? {
        Some(q) => q,
        None => {
            let q = quantize_all(cfg, &prepared, &bundles)?;
            for (site, folds) in &q {
                for (fold, m) in folds.iter().enumerate() {
                    out.write(&model_rel(*site, fold, "fogq"), &m.to_bytes())?;
                }
            }
            q
        }
    };
    let labels = labels(&prepared);
    let float = float_scores(&prepared, &bundles)?;
    let quant = quant_scores(&prepared, &qmodels)?;
    let params = Some(count_params(&bundles[&SensorSite::Ankle][0].to_model()?));
    let thr = cfg.vote.threshold;
    let sites = SensorSite::ALL.len();

    let mut report = Report::default();
    let mut add = |name: &str, curve_name: &str, probs: &[f64], y: &[bool]| -> Result<Vec<ReportRow>> {
        let (rows, curve) = rows_for(name, probs, y, thr, params)?;
        report.rows.extend(rows.clone());
        report.curves.push((curve_name.to_string(), curve));
        Ok(rows)
    };
    let oof_node = repeat_labels(&labels.oof, sites);
    add("float, single node (sites pooled)", "float_node", &pooled(&float.oof), &oof_node)?;
    let float_vote = add("float, majority vote", "float_vote", &vote_score(&float.oof, cfg.vote.quorum), &labels.oof)?;
    add("quantized, single node (sites pooled)", "quantized_node", &pooled(&quant.oof), &oof_node)?;
    add("quantized, majority vote", "quantized_vote", &vote_score(&quant.oof, cfg.vote.quorum), &labels.oof)?;

    let test_node = repeat_labels(&labels.test, sites);
    let (float_test, quant_test) = (pooled(&float.test), pooled(&quant.test));
    let float_test_auc = roc(&float_test, &test_node, &default_grid(DEFAULT_GRID_POINTS))?.auc;
    let quantized_test_auc = roc(&quant_test, &test_node, &default_grid(DEFAULT_GRID_POINTS))?.auc;
    let agree = float_test.iter().zip(&quant_test).filter(|(f, q)| (**f > thr) == (**q > thr)).count();
    let class_agreement = agree as f64 / float_test.len().max(1) as f64;
    for (name, scores) in [("float", &float), ("quantized", &quant)] {
        let vote = vote_score(&scores.test, cfg.vote.quorum);
        report.rows.push(ReportRow {
            name: format!("{name}, majority vote, test split (fold ensemble)"),
            operating_point: "fixed".into(),
            threshold: thr,
            metrics: metrics(&confusion(&vote, &labels.test, thr)?),
            auc: roc(&vote, &labels.test, &default_grid(DEFAULT_GRID_POINTS)).ok().map(|c| c.auc),
            param_count: params,
        });
    }
    let sim_path = cfg.out_dir.join(SIM_SUMMARY_FILE);
    if sim_path.exists() {
        let sim: SimSummary = read_json(&sim_path)?;
        report.rows.push(ReportRow {
            name: "simulated, majority vote (network, streamed)".into(),
            operating_point: "fixed".into(),
            threshold: thr,
            metrics: sim.vote_metrics,
            auc: None,
            param_count: params,
        });
    }

    for (site, folds) in &bundles {
        for (k, _) in folds.iter().enumerate() {
            let idx = prepared.split.fold_indices(k);
            let pos: Vec<usize> = idx.iter().map(|i| labels.oof_indices.binary_search(i).expect("fold window is out of fold")).collect();
            let p: Vec<f64> = pos.iter().map(|&j| float.oof[site][j]).collect();
            let y: Vec<bool> = pos.iter().map(|&j| labels.oof[j]).collect();
            report.folds.push(FoldRow {
                site: site.to_string(),
                fold: k,
                threshold: thr,
                metrics: metrics(&confusion(&p, &y, thr)?),
                auc: roc(&p, &y, &default_grid(DEFAULT_GRID_POINTS)).ok().map(|c| c.auc),
            });
        }
    }

    let headline = float_vote[1].clone();
    let auc_gap = (float_test_auc - quantized_test_auc).abs();
    report.notes = notes(&headline, auc_gap, class_agreement, cfg);
    out.write("metrics.csv", render_metrics_csv(&report).as_bytes())?;
    out.write("roc.csv", render_roc_csv(&report).as_bytes())?;
    out.write("report.md", render_markdown(&report).as_bytes())?;
    let summary = EvalSummary {
        headline,
        float_test_auc,
        quantized_test_auc,
        auc_gap,
        class_agreement,
        test_windows: float_test.len(),
        rows: report.rows,
    };
    out.write_json(EVAL_FILE, &summary)?;
    let mut inputs = prepared.inputs;
    inputs.extend(out.artifacts().iter().filter(|(k, _)| k.ends_with(".fogq")).map(|(k, v)| (k.clone(), v.clone())));
    finish(&mut out, "evaluate", cfg, inputs, started)?;
    if strict && auc_gap > MAX_AUC_GAP {
        return Err(CliError::Strict(format!("quantized-vs-float test AUC gap {auc_gap:.4} exceeds {MAX_AUC_GAP}")));
    }
    Ok(summary)
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}%", 100.0 * x))
}

fn notes(headline: &ReportRow, auc_gap: f64, agreement: f64, cfg: &RunConfig) -> Vec<String> {
    let m = &headline.metrics;
    let in_band = m.sensitivity.is_some_and(|s| s >= TARGET_SENSITIVITY) && m.f1.is_some_and(|f| f >= TARGET_F1);
    let mut out = vec![
        format!(
            "Headline (float majority vote, cross-validation windows, Youden threshold {:.3}): sensitivity {}, F1 {}.",
            headline.threshold,
            pct(m.sensitivity),
            pct(m.f1)
        ),
        if in_band {
            format!("Target band (sensitivity and F1 at least {TARGET_SENSITIVITY:.2}) met.")
        } else {
            format!(
                "Target band (sensitivity and F1 at least {TARGET_SENSITIVITY:.2}) missed: sensitivity gap {}, F1 gap {}. The published architecture and optimizer settings are not fully specified, so an exact match is not expected.",
                gap(m.sensitivity, TARGET_SENSITIVITY),
                gap(m.f1, TARGET_F1)
            )
        },
        format!("Quantized vs float test AUC gap {auc_gap:.4} (limit {MAX_AUC_GAP}); class agreement at {:.2}: {:.2}%.", cfg.vote.threshold, 100.0 * agreement),
        "`fixed` rows use the configured vote threshold; `youden` rows use the threshold maximizing sensitivity + specificity - 1 (ties to the lower threshold).".into(),
        "Majority-vote rows score a window by its second-largest site probability, so a threshold sweep of that score is a sweep of the vote threshold.".into(),
    ];
    if cfg.synthetic.is_some() {
        out.push("Data: generated recordings, not the Daphnet dataset.".into());
    }
    out
}

fn gap(v: Option<f64>, target: f64) -> String {
    v.map_or_else(|| "undefined".into(), |x| format!("{:+.2} pp", 100.0 * (x - target)))
}

// ----------------------------------------------------------------------- roc

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub name: String,
    pub auc: f64,
    pub best_threshold: f64,
}

pub fn roc_curves(cfg: &RunConfig) -> Result<Vec<CurveSummary>> {
    let started = Instant::now();
    let mut prepared = load_prepared(cfg)?;
    let bundles = load_bundles(cfg, prepared.split.fold_count, &mut prepared.inputs)?;
    let qmodels = load_qmodels(cfg, prepared.split.fold_count)?;
    let mut out = OutputDir::lock(&cfg.out_dir)?;
    let labels = labels(&prepared);
    let oof_node = repeat_labels(&labels.oof, SensorSite::ALL.len());
    let mut report = Report::default();
    let mut families = vec![("float", float_scores(&prepared, &bundles)?)];
    if let Some(q) = &qmodels {
        families.push(("quantized", quant_scores(&prepared, q)?));
    }
    let mut summary = Vec::new();
    for (name, s) in &families {
        for (suffix, probs, y) in [("node", pooled(&s.oof), &oof_node), ("vote", vote_score(&s.oof, cfg.vote.quorum), &labels.oof)] {
            let curve = roc(&probs, y, &default_grid(DEFAULT_GRID_POINTS))?;
            summary.push(CurveSummary { name: format!("{name}_{suffix}"), auc: curve.auc, best_threshold: best_threshold(&curve) });
            report.curves.push((format!("{name}_{suffix}"), curve));
        }
    }
    out.write("roc.csv", render_roc_csv(&report).as_bytes())?;
    finish(&mut out, "roc", cfg, prepared.inputs, started)?;
    Ok(summary)
}

// ------------------------------------------------------------------ simulate

fn node_from_file(path: &Path, position: usize, quantized: bool) -> Result<NodeModel> {
    let artifact = |source| CliError::Artifact { path: path.to_path_buf(), source };
    let bytes = read(path)?;
    if bytes.starts_with(QMODEL_MAGIC) {
        let q = QModel::from_bytes(&bytes).map_err(artifact)?;
        let site = q.metadata.site.unwrap_or(SensorSite::ALL[position]);
        return Ok(NodeModel::from_qmodel(site, q));
    }
    if quantized {
        let sibling = path.with_extension("fogq");
        if !sibling.exists() {
            return Err(missing(&sibling, "run `fogmesh quantize` or pass .fogq files"));
        }
        return node_from_file(&sibling, position, true);
    }
    let b = WeightsBundle::from_bytes(&bytes).map_err(artifact)?;
    let site = b.metadata.site.unwrap_or(SensorSite::ALL[position]);
    NodeModel::from_bundle(site, &b).map_err(artifact)
}

fn default_bundles(cfg: &RunConfig) -> Vec<PathBuf> {
    SensorSite::ALL.iter().map(|&s| cfg.out_dir.join(model_rel(s, 0, if cfg.quantized { "fogq" } else { "fogw" }))).collect()
}

pub fn simulate(cfg: &RunConfig) -> Result<SimSummary> {
    let started = Instant::now();
    let input = cfg
        .simulation
        .input
        .as_deref()
        .ok_or_else(|| CliError::Usage("simulate needs --input <daphnet file | synthetic:<seconds>[:<seed>]>".into()))?;
    let recording = load_sim_input(input)?;
    let paths = if cfg.simulation.bundles.is_empty() { default_bundles(cfg) } else { cfg.simulation.bundles.clone() };
    if paths.len() != SensorSite::ALL.len() {
        return Err(CliError::Usage(format!("expected 3 model files (ankle, thigh, trunk), got {}", paths.len())));
    }
    let mut inputs = BTreeMap::new();
    let mut nodes = Vec::new();
    for (i, p) in paths.iter().enumerate() {
        if !p.exists() {
            return Err(missing(p, "pass --bundles or run `fogmesh train` first"));
        }
        nodes.push(node_from_file(p, i, cfg.quantized)?);
        inputs.insert(p.display().to_string(), sha256_hex(&read(p)?));
    }
    inputs.insert(input.to_string(), sha256_hex(recording.to_daphnet_text().as_bytes()));
    if cfg.transport.loss_probability >= 1.0 {
        eprintln!("warning: loss probability {} drops every message; no alert can fire", cfg.transport.loss_probability);
    }
    let mut out = OutputDir::lock(&cfg.out_dir)?;
    let trace = run_simulation(&recording, nodes, &cfg.transport, &cfg.vote, &cfg.pipeline)?;
    let summary = trace.summary(cfg.vote.threshold);
    out.write(TRACE_FILE, trace.to_ndjson().as_bytes())?;
    out.write_json(SIM_SUMMARY_FILE, &summary)?;
    finish(&mut out, "simulate", cfg, inputs, started)?;
    Ok(summary)
}
