//! Run configuration: one JSON document, command-line flags win.

use std::path::{Path, PathBuf};

use fogmesh_core::daphnet_io::{load_dataset, parse_daphnet_file, parse_trial_file_name, DatasetError, SubjectRecording};
use fogmesh_core::dsp::PipelineConfig;
use fogmesh_core::nodesim::{gen_synthetic, TransportConfig, VoteConfig};
use fogmesh_core::secnn::ModelConfig;
use fogmesh_core::seed::{derive_seed, rng_for};
use fogmesh_core::train::TrainConfig;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const DATA_ENV: &str = "FOGMESH_DATA";

/// Generated stand-in for the Daphnet recordings: one trial per subject with
/// freeze episodes scattered through it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticDataset {
    pub subjects: u32,
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for SyntheticDataset {
    fn default() -> Self {
        Self { subjects: 6, duration_s: 120.0, seed: 0 }
    }
}

impl SyntheticDataset {
    pub fn recordings(&self) -> Vec<SubjectRecording> {
        (1..=self.subjects).map(|s| synthetic_recording(self.duration_s, self.seed, s)).collect()
    }
}

/// Alternating walking and freeze spans: walk 8-20 s, freeze 4-12 s.
pub fn freeze_segments(duration_s: f64, seed: u64, subject: u32) -> Vec<(f64, f64)> {
    let mut rng = rng_for(seed, "synthetic-segments", &[u64::from(subject)]);
    let mut out = Vec::new();
    let mut t = rng.random_range(4.0..12.0f64).floor();
    while t < duration_s {
        let end = (t + rng.random_range(4.0..12.0f64).floor()).min(duration_s);
        out.push((t, end));
        t = end + rng.random_range(8.0..20.0f64).floor();
    }
    out
}

pub fn synthetic_recording(duration_s: f64, seed: u64, subject: u32) -> SubjectRecording {
    let segments = freeze_segments(duration_s, seed, subject);
    let mut r = gen_synthetic(duration_s, &segments, derive_seed(seed, "synthetic-signal", &[u64::from(subject)]));
    r.subject_id = subject;
    r.trial_id = 1;
    r
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    /// A Daphnet trial file, or `synthetic:<seconds>[:<seed>]`.
    pub input: Option<String>,
    /// Model files in ankle, thigh, trunk order. Empty means the trained
    /// fold-0 models in the output directory.
    pub bundles: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data_root: Option<PathBuf>,
    /// Use generated recordings instead of files under `data_root`.
    pub synthetic: Option<SyntheticDataset>,
    pub seed: u64,
    pub fold_count: usize,
    pub test_fraction: f64,
    /// Assign whole subjects to folds instead of individual windows.
    pub subject_wise: bool,
    pub pipeline: PipelineConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    /// Training-fold windows used to calibrate each quantized model.
    pub calibration_windows: usize,
    pub vote: VoteConfig,
    pub transport: TransportConfig,
    pub quantized: bool,
    pub simulation: SimulationConfig,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_root: None,
            synthetic: None,
            seed: 0,
            fold_count: 4,
            test_fraction: 0.2,
            subject_wise: false,
            pipeline: PipelineConfig::default(),
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            calibration_windows: 256,
            vote: VoteConfig::default(),
            transport: TransportConfig::default(),
            quantized: false,
            simulation: SimulationConfig::default(),
            out_dir: PathBuf::from("fogmesh-out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_slice(&text).map_err(|source| CliError::Json { path: path.to_path_buf(), source })
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.windowing.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.training.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.model.input_len != self.pipeline.windowing.window_len || self.model.input_channels != 3 {
            return Err(CliError::Usage(format!(
                "model expects {}x{} windows, the pipeline produces {}x3",
                self.model.input_len, self.model.input_channels, self.pipeline.windowing.window_len
            )));
        }
        if self.fold_count < 2 {
            return Err(CliError::Usage("fold_count must be at least 2".into()));
        }
        self.transport.validate()?;
        Ok(())
    }

    /// Stable hash of the resolved config (`sha256` of its JSON).
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    /// Explicit root, else `$FOGMESH_DATA`.
    pub fn resolved_data_root(&self) -> Option<PathBuf> {
        self.data_root.clone().or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
    }

    pub fn load_recordings(&self) -> Result<Vec<SubjectRecording>> {
        if let Some(s) = &self.synthetic {
            return Ok(s.recordings());
        }
        let root = self.resolved_data_root().ok_or_else(|| {
            DatasetError::MissingDataset(PathBuf::from(format!("<unset: pass --data or set {DATA_ENV}>")))
        })?;
        Ok(load_dataset(&root)?)
    }
}

/// Recording named by a simulation `--input`.
pub fn load_sim_input(spec: &str) -> Result<SubjectRecording> {
    if let Some(rest) = spec.strip_prefix("synthetic:") {
        let mut parts = rest.split(':');
        let bad = || CliError::Usage(format!("bad synthetic input {spec:?}; expected synthetic:<seconds>[:<seed>]"));
        let duration: f64 = parts.next().and_then(|d| d.parse().ok()).filter(|d: &f64| *d > 0.0).ok_or_else(bad)?;
        let seed: u64 = match parts.next() {
            Some(s) => s.parse().map_err(|_| bad())?,
            None => 0,
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        return Ok(synthetic_recording(duration, seed, 0));
    }
    let path = Path::new(spec);
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let (subject, trial) = path
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(parse_trial_file_name)
        .unwrap_or((0, 0));
    parse_daphnet_file(&bytes, subject, trial)
        .map_err(|e| DatasetError::InFile { path: path.to_path_buf(), source: Box::new(e) }.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use fogmesh_core::daphnet_io::Annotation;

    #[test]
    fn partial_json_keeps_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{ "seed": 5, "training": { "epochs": 3 } }"#).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.training.epochs, 3);
        assert_eq!(cfg.training.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.model, ModelConfig::default());
        assert_eq!(cfg.fold_count, 4);
        cfg.validate().unwrap();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn freeze_segments_stay_inside_the_recording() {
        for subject in 0..20 {
            let segs = freeze_segments(90.0, 1, subject);
            assert!(!segs.is_empty());
            assert!(segs.iter().all(|&(a, b)| a < b && b <= 90.0));
            assert!(segs.windows(2).all(|w| w[0].1 < w[1].0));
        }
    }

    #[test]
    fn synthetic_dataset_annotations_match_segments() {
        let ds = SyntheticDataset { subjects: 2, duration_s: 40.0, seed: 4 };
        let recs = ds.recordings();
        assert_eq!(recs.iter().map(|r| r.subject_id).collect::<Vec<_>>(), vec![1, 2]);
        for r in &recs {
            let segs = freeze_segments(40.0, 4, r.subject_id);
            for (i, a) in r.annotations().iter().enumerate() {
                let t = i as f64 / 64.0;
                let inside = segs.iter().any(|&(s, e)| t >= s && t < e);
                assert_eq!(*a == Annotation::Freeze, inside, "sample {i}");
            }
        }
    }

    #[test]
    fn sim_input_specs() {
        assert_eq!(load_sim_input("synthetic:10").unwrap().len(), 640);
        assert_eq!(load_sim_input("synthetic:10:3").unwrap(), load_sim_input("synthetic:10:3").unwrap());
        for bad in ["synthetic:", "synthetic:-1", "synthetic:5:x", "synthetic:5:1:2"] {
            assert!(matches!(load_sim_input(bad), Err(CliError::Usage(_))), "{bad}");
        }
        assert_eq!(load_sim_input("/nonexistent/S01R01.txt").unwrap_err().exit_code(), 2);
    }
}
