use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{RunConfig, SyntheticDataset};
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "fogmesh", version, about = "Freezing-of-gait detection: preprocessing, training, quantization and network simulation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; flags below override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Daphnet dataset root (falls back to $FOGMESH_DATA).
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Use generated recordings instead of the Daphnet files.
    #[arg(long, global = true)]
    pub synthetic: bool,
    /// Use int8 models where a command can run either.
    #[arg(long, global = true)]
    pub quantized: bool,
    /// Fail when quantized and float AUC differ by more than 0.02.
    #[arg(long, global = true)]
    pub strict: bool,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub folds: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter, window and cache every site; write the fold split.
    Preprocess {
        /// Assign whole subjects to folds.
        #[arg(long)]
        subject_wise: bool,
    },
    /// Cross-validate one model per site and fold.
    Train,
    /// Score float and quantized models; write metrics.csv, roc.csv, report.md.
    Evaluate,
    /// Convert every trained model to int8.
    Quantize,
    /// Stream a recording through three nodes and the central vote.
    Simulate(SimulateArgs),
    /// Write ROC curves of the trained models.
    Roc,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    /// Model files in ankle, thigh, trunk order.
    #[arg(long, num_args = 1..)]
    pub bundles: Vec<PathBuf>,
    /// Daphnet trial file or `synthetic:<seconds>[:<seed>]`.
    #[arg(long)]
    pub input: Option<String>,
    #[arg(long)]
    pub loss: Option<f64>,
    #[arg(long)]
    pub latency_ms: Option<f64>,
    #[arg(long)]
    pub jitter_ms: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub quorum: Option<usize>,
}

impl Cli {
    /// Config file (or defaults) with flags applied.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let g = &self.global;
        let mut cfg = match &g.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = g.seed {
            cfg.seed = s;
        }
        if let Some(o) = &g.out {
            cfg.out_dir = o.clone();
        }
        if let Some(d) = &g.data {
            cfg.data_root = Some(d.clone());
            cfg.synthetic = None;
        }
        if g.synthetic && cfg.synthetic.is_none() {
            cfg.synthetic = Some(SyntheticDataset::default());
        }
        if g.quantized {
            cfg.quantized = true;
        }
        if let Some(e) = g.epochs {
            cfg.training.epochs = e;
        }
        if let Some(k) = g.folds {
            cfg.fold_count = k;
        }
        match &self.command {
            Command::Preprocess { subject_wise: true } => cfg.subject_wise = true,
            Command::Simulate(s) => {
                if !s.bundles.is_empty() {
                    cfg.simulation.bundles = s.bundles.clone();
                }
                if let Some(i) = &s.input {
                    cfg.simulation.input = Some(i.clone());
                }
                if let Some(v) = s.loss {
                    cfg.transport.loss_probability = v;
                }
                if let Some(v) = s.latency_ms {
                    cfg.transport.latency_ms = v;
                }
                if let Some(v) = s.jitter_ms {
                    cfg.transport.jitter_ms = v;
                }
                if let Some(v) = s.threshold {
                    cfg.vote.threshold = v;
                }
                if let Some(v) = s.quorum {
                    cfg.vote.quorum = v;
                }
            }
            _ => {}
        }
        // every random stream descends from the top-level seed
        cfg.training.seed = cfg.seed;
        cfg.transport.seed = cfg.seed;
        cfg.model.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }
}
