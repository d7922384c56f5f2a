//! `FOGC` window cache: filtered, not yet normalized windows of one site.
//! JSON header with per-window label and provenance, then f64 LE samples.

use fogmesh_core::daphnet_io::SensorSite;
use fogmesh_core::dsp::{FilteredWindow, Label};
use fogmesh_core::framing::{f64s_from_le, f64s_to_le, read_frame, write_frame};
use serde::{Deserialize, Serialize};

pub const CACHE_MAGIC: &[u8; 4] = b"FOGC";
pub const CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    site: SensorSite,
    window_len: usize,
    windows: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    label: Label,
    subject_id: u32,
    trial_id: u32,
    start_index: usize,
}

pub fn encode(site: SensorSite, window_len: usize, windows: &[FilteredWindow]) -> Vec<u8> {
    let header = Header {
        site,
        window_len,
        windows: windows
            .iter()
            .map(|w| Entry { label: w.label, subject_id: w.subject_id, trial_id: w.trial_id, start_index: w.start_index })
            .collect(),
    };
    let mut payload = Vec::with_capacity(windows.len() * window_len * 24);
    for w in windows {
        debug_assert_eq!(w.samples.len(), window_len);
        f64s_to_le(&w.samples.iter().flatten().copied().collect::<Vec<_>>(), &mut payload);
    }
    write_frame(CACHE_MAGIC, CACHE_VERSION, &serde_json::to_vec(&header).expect("header serializes"), &payload)
}

pub fn decode(bytes: &[u8]) -> Result<(SensorSite, Vec<FilteredWindow>), String> {
    let frame = read_frame(bytes, CACHE_MAGIC, CACHE_VERSION).map_err(|e| e.to_string())?;
    let header: Header = serde_json::from_slice(frame.header).map_err(|e| format!("corrupt header: {e}"))?;
    let per_window = header.window_len * 3;
    let values = f64s_from_le(frame.payload);
    if frame.payload.len() % 8 != 0 || values.len() != per_window * header.windows.len() {
        return Err(format!("payload holds {} values, expected {}", values.len(), per_window * header.windows.len()));
    }
    let windows = header
        .windows
        .into_iter()
        .zip(values.chunks_exact(per_window.max(1)))
        .map(|(e, v)| FilteredWindow {
            samples: v.chunks_exact(3).map(|s| [s[0], s[1], s[2]]).collect(),
            label: e.label,
            subject_id: e.subject_id,
            trial_id: e.trial_id,
            site: header.site,
            start_index: e.start_index,
        })
        .collect();
    Ok((header.site, windows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let windows: Vec<FilteredWindow> = (0..3)
            .map(|i| FilteredWindow {
                samples: (0..4).map(|t| [t as f64, -1.5 * i as f64, 1e-300]).collect(),
                label: if i == 1 { Label::Freeze } else { Label::NoFreeze },
                subject_id: 2,
                trial_id: 1,
                site: SensorSite::Thigh,
                start_index: 64 * i,
            })
            .collect();
        let bytes = encode(SensorSite::Thigh, 4, &windows);
        assert_eq!(decode(&bytes).unwrap(), (SensorSite::Thigh, windows));
        assert!(decode(&bytes[..bytes.len() - 8]).is_err());
        assert!(decode(b"FOGW\x01\0\0\0\0\0\0\0").is_err());
    }
}
