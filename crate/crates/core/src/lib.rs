//! Freezing-of-gait detection on wearable accelerometers.
//!
//! The crate covers the whole path from raw Daphnet recordings to fused
//! alarms:
//!
//! - [`daphnet_io`]: dataset parsing, subject exclusion, fold splits
//! - [`dsp`]: saturation, median and first-order low-pass filtering,
//!   min-max normalization, windowing and window labeling
//! - [`secnn`]: the squeeze-and-excitation 1-D CNN and its weights bundle
//! - [`train`]: weighted BCE, backpropagation, Adam, k-fold training
//! - [`quant`]: post-training int8 quantization and integer inference
//! - [`nodesim`]: discrete-event simulation of three sensor nodes and the
//!   central majority vote
//! - [`eval`]: confusion counts, metrics, ROC/AUC and reports

pub mod daphnet_io;
pub mod dsp;
pub mod eval;
pub mod framing;
pub mod nodesim;
pub mod quant;
pub mod secnn;
pub mod seed;
pub mod train;

pub use daphnet_io::{Annotation, RawRecord, SensorSite, SubjectRecording};
pub use dsp::{Label, NormStats, Window, WindowingConfig};
pub use secnn::{ModelConfig, SeCnn, WeightsBundle};
