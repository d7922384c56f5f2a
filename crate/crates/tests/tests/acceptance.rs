//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Criterion 1 needs the Daphnet recordings; point `FOGMESH_DATA` at the
//! dataset root to run it. Without them the line reports FAIL together with
//! the numbers from a generated stand-in written in the Daphnet file format.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use fogmesh_cli::commands::{model_rel, EvalSummary, EVAL_FILE, MAX_AUC_GAP, SIM_SUMMARY_FILE, TARGET_F1, TARGET_SENSITIVITY, TRACE_FILE};
use fogmesh_cli::config::{synthetic_recording, DATA_ENV};
use fogmesh_cli::Cli;
use fogmesh_core::daphnet_io::{SensorSite, EXCLUDED_SUBJECTS};
use fogmesh_core::dsp::{filter_site_signal, LowPass, PipelineConfig};
use fogmesh_core::nodesim::{central_vote, gen_synthetic, run_simulation, Decision, ModelHandle, NodeModel, TransportConfig, VoteConfig};
use fogmesh_core::secnn::{build_model, count_params, ModelConfig, SeCnn};
use fogmesh_core::train::gradcheck::{gradient_check, reduced_config};
use fogmesh_core::{NormStats, WeightsBundle};
use tempfile::TempDir;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn cli(args: &[&str]) -> Result<String, String> {
    let parsed = Cli::try_parse_from(std::iter::once("fogmesh").chain(args.iter().copied())).map_err(|e| e.to_string())?;
    fogmesh_cli::run(&parsed).map_err(|e| e.to_string())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// `preprocess -> train -> evaluate` with the given config file.
fn full_run(config: &Path, out: &Path, extra: &[&str]) -> Result<EvalSummary, String> {
    for cmd in ["preprocess", "train", "evaluate"] {
        let mut args = vec![cmd, "--config", s(config), "--out", s(out)];
        args.extend_from_slice(extra);
        cli(&args).map_err(|e| format!("{cmd}: {e}"))?;
    }
    let bytes = std::fs::read(out.join(EVAL_FILE)).map_err(|e| e.to_string())?;
    serde_json::from_slice(&bytes).map_err(|e| e.to_string())
}

fn pct(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{:.2}%", 100.0 * v))
}

fn in_band(e: &EvalSummary) -> bool {
    let m = &e.headline.metrics;
    m.sensitivity.is_some_and(|v| v >= TARGET_SENSITIVITY) && m.f1.is_some_and(|v| v >= TARGET_F1)
}

fn headline(e: &EvalSummary) -> String {
    format!(
        "sensitivity {} F1 {} at threshold {:.3}",
        pct(e.headline.metrics.sensitivity),
        pct(e.headline.metrics.f1),
        e.headline.threshold
    )
}

/// Trained run on the dataset under test: the real recordings when present,
/// otherwise generated recordings written as Daphnet trial files.
struct Fixture {
    _dir: TempDir,
    out: PathBuf,
    real: bool,
    eval: Result<EvalSummary, String>,
    elapsed_s: f64,
}

fn fixture() -> Fixture {
    let dir = TempDir::new().expect("tempdir");
    let out = dir.path().join("run");
    let config = dir.path().join("config.json");
    let data = std::env::var_os(DATA_ENV).map(PathBuf::from).filter(|p| p.is_dir());
    let real = data.is_some();
    let root = data.unwrap_or_else(|| {
        let root = dir.path().join("daphnet");
        std::fs::create_dir_all(&root).unwrap();
        for subject in (1..=7).filter(|s| !EXCLUDED_SUBJECTS.contains(s)) {
            let r = synthetic_recording(120.0, 0, subject);
            std::fs::write(root.join(format!("S{subject:02}R01.txt")), r.to_daphnet_text()).unwrap();
        }
        root
    });
    std::fs::write(&config, "{}").unwrap();
    let started = Instant::now();
    let eval = full_run(&config, &out, &["--data", s(&root), "--folds", "4"]);
    Fixture { _dir: dir, out, real, eval, elapsed_s: started.elapsed().as_secs_f64() }
}

fn criterion_1(f: &Fixture) -> Outcome {
    match (&f.eval, f.real) {
        (Err(e), _) => outcome(false, format!("pipeline failed: {e}")),
        (Ok(e), true) => {
            let detail = format!("Daphnet, 4 folds: {} ({:.0} s)", headline(e), f.elapsed_s);
            if in_band(e) {
                outcome(true, detail)
            } else {
                let documented = std::fs::read_to_string(f.out.join("report.md")).is_ok_and(|md| md.contains("target"));
                outcome(false, format!("{detail}; below the band (gap documented in report.md: {documented}; criteria 2-8 decide)"))
            }
        }
        (Ok(e), false) => outcome(
            false,
            format!(
                "not run: no Daphnet data (set {DATA_ENV}); generated stand-in in Daphnet format gives {} ({:.0} s), which says nothing about Daphnet",
                headline(e),
                f.elapsed_s
            ),
        ),
    }
}

fn criterion_2() -> Outcome {
    let n = count_params(&build_model::<f32>(&ModelConfig::default()).expect("default config builds"));
    outcome(n == 19_819 && n <= 20_000, format!("{n} parameters (expected 19819, budget 20000)"))
}

fn criterion_3() -> Outcome {
    let r = gradient_check(&reduced_config(), 100, 1e-3, 2024);
    outcome(
        r.points == 100 && r.max_relative_error < 1e-4,
        format!(
            "{} points, {} coordinates ({} skipped at kinks), max relative error {:.2e}",
            r.points, r.coordinates_checked, r.coordinates_skipped, r.max_relative_error
        ),
    )
}

fn criterion_4(f: &Fixture) -> Outcome {
    match &f.eval {
        Err(e) => outcome(false, format!("no trained models: {e}")),
        Ok(e) => outcome(
            e.auc_gap <= MAX_AUC_GAP && e.class_agreement >= 0.95,
            format!(
                "test AUC float {:.4} int8 {:.4} gap {:.4}; agreement at 0.4 {:.2}% over {} windows{}",
                e.float_test_auc,
                e.quantized_test_auc,
                e.auc_gap,
                100.0 * e.class_agreement,
                e.test_windows,
                if f.real { "" } else { " (generated data)" }
            ),
        ),
    }
}

/// Trained fold-0 models streamed over a recording none of them saw.
fn criterion_5(f: &Fixture) -> Outcome {
    if let Err(e) = &f.eval {
        return outcome(false, format!("no trained models: {e}"));
    }
    let pipeline = PipelineConfig::default();
    let recording = synthetic_recording(300.0, 99, 0);
    let mut nodes = Vec::new();
    for site in SensorSite::ALL {
        let bytes = std::fs::read(f.out.join(model_rel(site, 0, "fogw"))).expect("trained model");
        let bundle = WeightsBundle::from_bytes(&bytes).expect("valid bundle");
        nodes.push(NodeModel::from_bundle(site, &bundle).expect("valid model"));
    }
    let trace = match run_simulation(&recording, nodes.clone(), &TransportConfig::default(), &VoteConfig::default(), &pipeline) {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("simulation failed: {e}")),
    };
    let (mut worst, mut compared, mut counts_match) = (0.0f64, 0usize, true);
    for node in &nodes {
        let ModelHandle::Float(model) = &node.handle else { unreachable!() };
        let filtered = filter_site_signal(&recording.site_signal(node.site), &pipeline);
        let batch: Vec<f64> = (0..)
            .map(|e| 64 * e)
            .take_while(|&start| start + 128 <= filtered.len())
            .map(|start| {
                let w: Vec<f32> =
                    filtered[start..start + 128].iter().flat_map(|x| node.norm.apply_sample(*x).map(|v| v as f32)).collect();
                f64::from(model.forward(&w).expect("window length"))
            })
            .collect();
        let streamed = trace.node_probabilities(node.site);
        counts_match &= streamed.len() == batch.len();
        for (a, b) in streamed.iter().zip(&batch) {
            worst = worst.max((a - b).abs());
            compared += 1;
        }
    }
    outcome(
        counts_match && compared > 0 && worst <= 1e-6,
        format!("{compared} predictions over a 300 s held-out recording, max |stream - batch| {worst:.2e}"),
    )
}

fn criterion_6() -> Outcome {
    let grid: Vec<f64> = (0..=10).map(|i| f64::from(i) / 10.0).collect();
    let (mut cases, mut mismatches) = (0usize, 0usize);
    for &a in &grid {
        for &b in &grid {
            for &c in &grid {
                let all = [a, b, c];
                for mask in 0u8..8 {
                    let received: Vec<f64> = (0..3).filter(|i| mask & (1 << i) != 0).map(|i| all[i]).collect();
                    let positives = received.iter().filter(|&&p| p > 0.4).count();
                    let oracle = if positives >= 2 { Decision::Alert } else { Decision::NoAlert };
                    cases += 1;
                    mismatches += usize::from(central_vote(&received, 0.4, 2) != oracle);
                }
            }
        }
    }
    outcome(cases == 1331 * 8 && mismatches == 0, format!("{cases} cases (11^3 tuples x 8 subsets), {mismatches} mismatches"))
}

fn criterion_7() -> Outcome {
    let alpha = PipelineConfig::default().filter.alpha();
    let mut lp = LowPass::new(alpha);
    let mut worst = lp.step(0.0).abs();
    for k in 1..=1000i32 {
        let expected = 1.0 - (1.0 - alpha).powi(k);
        worst = worst.max((lp.step(1.0) - expected).abs());
    }
    outcome(worst <= 1e-9, format!("alpha {alpha:.6}, max error {worst:.2e} over k <= 1000"))
}

const DETERMINISM_CONFIG: &str = r#"{
  "synthetic": { "subjects": 4, "duration_s": 60.0, "seed": 3 },
  "seed": 7,
  "training": { "epochs": 5, "batch_size": 32 }
}"#;

const COMPARED_FILES: [&str; 6] = ["metrics.csv", "roc.csv", "report.md", EVAL_FILE, TRACE_FILE, SIM_SUMMARY_FILE];

fn criterion_8() -> Outcome {
    let dir = TempDir::new().expect("tempdir");
    let config = dir.path().join("config.json");
    std::fs::write(&config, DETERMINISM_CONFIG).unwrap();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        if let Err(e) = full_run(&config, &out, &[]) {
            return outcome(false, format!("run {name} failed: {e}"));
        }
        if let Err(e) = cli(&["simulate", "--config", s(&config), "--out", s(&out), "--input", "synthetic:120:5", "--loss", "0.2"]) {
            return outcome(false, format!("simulate {name} failed: {e}"));
        }
        runs.push(out);
    }
    let differing: Vec<&str> = COMPARED_FILES
        .iter()
        .copied()
        .filter(|f| std::fs::read(runs[0].join(f)).ok() != std::fs::read(runs[1].join(f)).ok() || !runs[0].join(f).exists())
        .collect();
    if differing.is_empty() {
        outcome(true, format!("{} files identical across two seed-7 runs", COMPARED_FILES.len()))
    } else {
        outcome(false, format!("differ or missing: {}", differing.join(", ")))
    }
}

fn criterion_9() -> Outcome {
    let segments: Vec<(f64, f64)> = (0..120).map(|k| (30.0 * f64::from(k) + 12.0, 30.0 * f64::from(k) + 20.0)).collect();
    let recording = gen_synthetic(3600.0, &segments, 9);
    let nodes: Vec<NodeModel> = SensorSite::ALL
        .into_iter()
        .map(|site| {
            let cfg = ModelConfig { seed: 100 + site.index() as u64, ..Default::default() };
            let model: SeCnn<f32> = build_model(&cfg).expect("default config builds");
            NodeModel { site, handle: ModelHandle::Float(model), norm: NormStats { min: [-1500.0; 3], max: [2500.0; 3] } }
        })
        .collect();
    let started = Instant::now();
    let trace = run_simulation(&recording, nodes, &TransportConfig::default(), &VoteConfig::default(), &PipelineConfig::default());
    let elapsed = started.elapsed().as_secs_f64();
    match trace {
        Err(e) => outcome(false, format!("simulation failed: {e}")),
        Ok(t) => outcome(
            elapsed <= 36.0,
            format!("1 h of 9-channel 64 Hz data in {elapsed:.2} s ({:.0}x real time, {} vote frames)", 3600.0 / elapsed, t.frames().count()),
        ),
    }
}

fn main() -> ExitCode {
    let fixture = fixture();
    let results = [
        ("1 Daphnet reproduction", criterion_1(&fixture)),
        ("2 parameter budget", criterion_2()),
        ("3 gradient check", criterion_3()),
        ("4 quantization conformance", criterion_4(&fixture)),
        ("5 stream/batch equivalence", criterion_5(&fixture)),
        ("6 vote oracle", criterion_6()),
        ("7 low-pass step response", criterion_7()),
        ("8 determinism", criterion_8()),
        ("9 simulation throughput", criterion_9()),
    ];
    for (name, o) in &results {
        println!("{} [{name}] {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
