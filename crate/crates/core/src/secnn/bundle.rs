use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, SeCnn};
use crate::daphnet_io::SensorSite;
use crate::dsp::NormStats;
use crate::framing::{f32s_from_le, f32s_to_le, read_frame, write_frame, FrameError};

pub const BUNDLE_MAGIC: &[u8; 4] = b"FOGW";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub site: Option<SensorSite>,
    pub fold_id: Option<u32>,
    pub training_seed: u64,
}

/// Serializable f32 weights of one node model plus its normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightsBundle {
    pub config: ModelConfig,
    pub tensors: Vec<NamedTensor>,
    pub norm: NormStats,
    pub metadata: BundleMetadata,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    config_hash: String,
    tensors: Vec<ManifestEntry>,
    norm_stats: NormStats,
    metadata: BundleMetadata,
}

fn frame_err(e: FrameError) -> ModelError {
    match e {
        FrameError::BadMagic { .. } => ModelError::BadMagic("FOGW"),
        FrameError::Version { found, expected } => {
            ModelError::VersionMismatch(format!("format version {found}, expected {expected}"))
        }
        FrameError::Truncated { declared, available } => {
            ModelError::ShapeMismatch(format!("truncated header ({available} of {declared} bytes)"))
        }
    }
}

impl WeightsBundle {
    pub fn from_model(model: &SeCnn<f32>, norm: NormStats, metadata: BundleMetadata) -> Self {
        let tensors = model
            .config
            .tensor_specs()
            .into_iter()
            .zip(model.params())
            .map(|(spec, data)| NamedTensor { name: spec.name, shape: spec.shape, data: data.to_vec() })
            .collect();
        Self { config: model.config.clone(), tensors, norm, metadata }
    }

    pub fn to_model(&self) -> Result<SeCnn<f32>, ModelError> {
        self.validate()?;
        let mut model = SeCnn::<f32>::zeros(&self.config)?;
        for (dst, t) in model.params_mut().into_iter().zip(&self.tensors) {
            dst.copy_from_slice(&t.data);
        }
        Ok(model)
    }

    /// Tensor names and shapes must equal the config-derived ones, all values finite.
    pub fn validate(&self) -> Result<(), ModelError> {
        let specs = self.config.tensor_specs();
        if specs.len() != self.tensors.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} tensors, config implies {}",
                self.tensors.len(),
                specs.len()
            )));
        }
        for (spec, t) in specs.iter().zip(&self.tensors) {
            if spec.name != t.name || spec.shape != t.shape || t.data.len() != spec.len() {
                return Err(ModelError::ShapeMismatch(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    t.name, t.shape, spec.name, spec.shape
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::ShapeMismatch(format!("tensor {} has non-finite values", t.name)));
            }
        }
        Ok(())
    }

    /// Refuse a bundle built for a different architecture.
    pub fn check_config(&self, expected: &ModelConfig) -> Result<(), ModelError> {
        let (found, want) = (self.config.config_hash(), expected.config_hash());
        if found != want {
            return Err(ModelError::VersionMismatch(format!("config hash {found}, expected {want}")));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0;
        let mut payload = Vec::with_capacity(self.param_count() * 4);
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                let entry = ManifestEntry { name: t.name.clone(), shape: t.shape.clone(), offset, len: t.data.len() };
                offset += t.data.len() * 4;
                f32s_to_le(&t.data, &mut payload);
                entry
            })
            .collect();
        let header = Header {
            format_version: BUNDLE_VERSION,
            config: self.config.clone(),
            config_hash: self.config.config_hash(),
            tensors,
            norm_stats: self.norm,
            metadata: self.metadata.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        write_frame(BUNDLE_MAGIC, BUNDLE_VERSION, &header, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let frame = read_frame(bytes, BUNDLE_MAGIC, BUNDLE_VERSION).map_err(frame_err)?;
        let header: Header = serde_json::from_slice(frame.header).map_err(|e| ModelError::Header(e.to_string()))?;
        if header.format_version != BUNDLE_VERSION {
            return Err(ModelError::VersionMismatch(format!("header format version {}", header.format_version)));
        }
        let actual_hash = header.config.config_hash();
        if actual_hash != header.config_hash {
            return Err(ModelError::VersionMismatch(format!(
                "config hash {} recorded, {actual_hash} computed",
                header.config_hash
            )));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut expected_offset = 0;
        for entry in header.tensors {
            let bytes_len = entry.len * 4;
            if entry.offset != expected_offset || entry.shape.iter().product::<usize>() != entry.len {
                return Err(ModelError::ShapeMismatch(format!("manifest entry {} is inconsistent", entry.name)));
            }
            let end = entry.offset + bytes_len;
            if end > frame.payload.len() {
                return Err(ModelError::ShapeMismatch(format!(
                    "payload truncated inside tensor {} ({} of {end} bytes)",
                    entry.name,
                    frame.payload.len()
                )));
            }
            tensors.push(NamedTensor {
                name: entry.name,
                shape: entry.shape,
                data: f32s_from_le(&frame.payload[entry.offset..end]),
            });
            expected_offset = end;
        }
        if expected_offset != frame.payload.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} trailing payload bytes",
                frame.payload.len() - expected_offset
            )));
        }
        let bundle = Self { config: header.config, tensors, norm: header.norm_stats, metadata: header.metadata };
        bundle.validate()?;
        Ok(bundle)
    }
}
