//! `FOGQ` container: JSON header with per-tensor scales and zero points,
//! then int8 kernels and int32 LE biases in canonical tensor order. Shapes
//! are implied by the config, so the header carries no per-tensor names.

use serde::{Deserialize, Serialize};

use super::{ActivationParams, QLayer, QModel, QuantParams};
use crate::dsp::NormStats;
use crate::framing::{read_frame, write_frame, FrameError};
use crate::secnn::{BundleMetadata, ModelConfig, ModelError};

pub const QMODEL_MAGIC: &[u8; 4] = b"FOGQ";
pub const QMODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    config_hash: String,
    norm_stats: NormStats,
    metadata: BundleMetadata,
    /// Kernel params per layer.
    kernels: Vec<QuantParams>,
    activations: ActivationParams,
}

impl QModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::with_capacity(self.param_count() * 2);
        for l in &self.layers {
            payload.extend(l.kernel.iter().map(|&q| q as u8));
            for b in &l.bias {
                payload.extend_from_slice(&b.to_le_bytes());
            }
        }
        let header = Header {
            format_version: QMODEL_VERSION,
            config: self.config.clone(),
            config_hash: self.config.config_hash(),
            norm_stats: self.norm,
            metadata: self.metadata.clone(),
            kernels: self.layers.iter().map(|l| l.kernel_params).collect(),
            activations: self.activations.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        write_frame(QMODEL_MAGIC, QMODEL_VERSION, &header, &payload)
    }

    /// Parse and rebuild the derived integer plan (multipliers, gate tables).
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let frame = read_frame(bytes, QMODEL_MAGIC, QMODEL_VERSION).map_err(|e| match e {
            FrameError::BadMagic { .. } => ModelError::BadMagic("FOGQ"),
            FrameError::Version { found, expected } => {
                ModelError::VersionMismatch(format!("format version {found}, expected {expected}"))
            }
            FrameError::Truncated { declared, available } => {
                ModelError::ShapeMismatch(format!("truncated header ({available} of {declared} bytes)"))
            }
        })?;
        let header: Header = serde_json::from_slice(frame.header).map_err(|e| ModelError::Header(e.to_string()))?;
        let computed = header.config.config_hash();
        if computed != header.config_hash {
            return Err(ModelError::VersionMismatch(format!(
                "config hash {} recorded, {computed} computed",
                header.config_hash
            )));
        }
        header.config.validate()?;
        let specs = header.config.tensor_specs();
        if header.kernels.len() * 2 != specs.len() {
            return Err(ModelError::ShapeMismatch(format!("{} kernel params for {} layers", header.kernels.len(), specs.len() / 2)));
        }
        let expected: usize = specs.chunks(2).map(|p| p[0].len() + 4 * p[1].len()).sum();
        if frame.payload.len() != expected {
            return Err(ModelError::ShapeMismatch(format!("payload is {} bytes, expected {expected}", frame.payload.len())));
        }
        let mut at = 0;
        let mut layers = Vec::with_capacity(header.kernels.len());
        for (pair, kp) in specs.chunks(2).zip(&header.kernels) {
            let kernel = frame.payload[at..at + pair[0].len()].iter().map(|&b| b as i8).collect();
            at += pair[0].len();
            let bias = frame.payload[at..at + 4 * pair[1].len()]
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            at += 4 * pair[1].len();
            layers.push(QLayer { kernel, kernel_params: *kp, bias });
        }
        QModel::build(header.config, header.norm_stats, header.metadata, layers, header.activations)
    }
}
