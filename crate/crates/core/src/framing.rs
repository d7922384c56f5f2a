//! Shared binary container: 4-byte magic, u32 format version, u32 header
//! length, compact JSON header, raw little-endian payload.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: String },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("truncated container: header declares {declared} bytes, {available} available")]
    Truncated { declared: usize, available: usize },
}

pub struct Frame<'a> {
    pub header: &'a [u8],
    pub payload: &'a [u8],
}

pub fn write_frame(magic: &[u8; 4], version: u32, header: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + header.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(payload);
    out
}

pub fn read_frame<'a>(bytes: &'a [u8], magic: &[u8; 4], version: u32) -> Result<Frame<'a>, FrameError> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(FrameError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    if bytes.len() < 12 {
        return Err(FrameError::Truncated { declared: 12, available: bytes.len() });
    }
    let found = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if found != version {
        return Err(FrameError::Version { found, expected: version });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let end = 12 + header_len;
    if bytes.len() < end {
        return Err(FrameError::Truncated { declared: end, available: bytes.len() });
    }
    Ok(Frame { header: &bytes[12..end], payload: &bytes[end..] })
}

pub fn f32s_to_le(values: &[f32], out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn f32s_from_le(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()
}

pub fn f64s_to_le(values: &[f64], out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn f64s_from_le(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
}
