//! Preprocessing chain shared by offline training and the simulated nodes.
//!
//! Order is fixed: saturate, 3-point median, first-order low-pass,
//! min-max normalize, then segment into labeled windows. Both the batch
//! functions and the streaming filter objects implement the same arithmetic
//! so that a node fed sample-by-sample reproduces the batch pipeline exactly.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::daphnet_io::{Annotation, SensorSite};

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("channel {0} has no samples")]
    EmptyChannel(usize),
    #[error("signal of {len} samples is shorter than one window ({window_len})")]
    SignalTooShort { len: usize, window_len: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { cutoff_hz: 20.0, sample_rate_hz: 64.0 }
    }
}

impl FilterConfig {
    /// RC smoothing coefficient `dt / (RC + dt)`.
    pub fn alpha(&self) -> f64 {
        let dt = 1.0 / self.sample_rate_hz;
        let rc = 1.0 / (2.0 * std::f64::consts::PI * self.cutoff_hz);
        dt / (rc + dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowingConfig {
    pub window_len: usize,
    pub overlap: usize,
    /// A window is `Freeze` when its share of freeze samples is strictly above this.
    pub freeze_fraction_threshold: f64,
    /// Milli-g.
    pub saturation_limit: f64,
}

impl Default for WindowingConfig {
    fn default() -> Self {
        Self { window_len: 128, overlap: 64, freeze_fraction_threshold: 0.40, saturation_limit: 5000.0 }
    }
}

impl WindowingConfig {
    pub fn hop(&self) -> usize {
        self.window_len - self.overlap
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if self.overlap == 0 || self.overlap >= self.window_len {
            return Err(DspError::InvalidConfig(format!(
                "overlap {} must be in (0, window_len={})",
                self.overlap, self.window_len
            )));
        }
        if !(self.freeze_fraction_threshold > 0.0 && self.freeze_fraction_threshold < 1.0) {
            return Err(DspError::InvalidConfig("freeze_fraction_threshold must be in (0,1)".into()));
        }
        if !(self.saturation_limit > 0.0) {
            return Err(DspError::InvalidConfig("saturation_limit must be positive".into()));
        }
        Ok(())
    }
}

/// Everything that shapes a filtered signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub windowing: WindowingConfig,
    pub filter: FilterConfig,
    pub median_filter: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { windowing: WindowingConfig::default(), filter: FilterConfig::default(), median_filter: true }
    }
}

pub fn saturate(signal: &[f64], limit: f64) -> Vec<f64> {
    signal.iter().map(|v| v.clamp(-limit, limit)).collect()
}

/// One step of `y[n] = y[n-1] + alpha * (x[n] - y[n-1])`; `None` state means
/// this is the first sample and the output is initialized to it.
pub fn lowpass_step(state: Option<f64>, x: f64, alpha: f64) -> f64 {
    match state {
        None => x,
        Some(prev) => prev + alpha * (x - prev),
    }
}

pub fn lowpass(signal: &[f64], alpha: f64) -> Vec<f64> {
    let mut lp = LowPass::new(alpha);
    signal.iter().map(|&x| lp.step(x)).collect()
}

#[derive(Debug, Clone)]
pub struct LowPass {
    alpha: f64,
    state: Option<f64>,
}

impl LowPass {
    pub fn new(alpha: f64) -> Self {
        Self { alpha, state: None }
    }

    pub fn step(&mut self, x: f64) -> f64 {
        let y = lowpass_step(self.state, x, self.alpha);
        self.state = Some(y);
        y
    }

    pub fn reset(&mut self) {
        self.state = None;
    }
}

fn median_of3(a: f64, b: f64, c: f64) -> f64 {
    a.min(b).max(a.max(b).min(c))
}

/// Centered 3-point median with edge replication.
pub fn median3(signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    (0..n)
        .map(|i| {
            let prev = signal[i.saturating_sub(1)];
            let next = signal[(i + 1).min(n - 1)];
            median_of3(prev, signal[i], next)
        })
        .collect()
}

/// Streaming form of [`median3`]. The centered window needs one sample of
/// lookahead: output `i` is released when input `i + 1` arrives, and the last
/// output (edge-replicated) is released by [`Median3::flush`].
#[derive(Debug, Clone, Default)]
pub struct Median3 {
    prev: Option<f64>,
    cur: Option<f64>,
}

impl Median3 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) -> Option<f64> {
        let out = self.cur.map(|cur| median_of3(self.prev.unwrap_or(cur), cur, x));
        if self.cur.is_some() {
            self.prev = self.cur;
        }
        self.cur = Some(x);
        out
    }

    pub fn flush(&mut self) -> Option<f64> {
        let cur = self.cur.take()?;
        let out = median_of3(self.prev.unwrap_or(cur), cur, cur);
        self.prev = None;
        Some(out)
    }
}

/// Streaming saturate -> median -> low-pass for one 3-axis site.
#[derive(Debug, Clone)]
pub struct StreamingFilter {
    limit: f64,
    medians: Option<[Median3; 3]>,
    lowpass: [LowPass; 3],
}

impl StreamingFilter {
    pub fn new(cfg: &PipelineConfig) -> Self {
        let alpha = cfg.filter.alpha();
        Self {
            limit: cfg.windowing.saturation_limit,
            medians: cfg.median_filter.then(Default::default),
            lowpass: [LowPass::new(alpha), LowPass::new(alpha), LowPass::new(alpha)],
        }
    }

    /// Feed one raw sample; returns the filtered sample it releases, if any.
    pub fn push(&mut self, raw: [f64; 3]) -> Option<[f64; 3]> {
        let sat = raw.map(|v| v.clamp(-self.limit, self.limit));
        let med = match &mut self.medians {
            None => sat,
            Some(m) => {
                let out = [m[0].push(sat[0]), m[1].push(sat[1]), m[2].push(sat[2])];
                [out[0]?, out[1]?, out[2]?]
            }
        };
        Some(self.lowpass_all(med))
    }

    /// Release the final filtered sample at end of stream.
    pub fn flush(&mut self) -> Option<[f64; 3]> {
        let m = self.medians.as_mut()?;
        let out = [m[0].flush(), m[1].flush(), m[2].flush()];
        let med = [out[0]?, out[1]?, out[2]?];
        Some(self.lowpass_all(med))
    }

    fn lowpass_all(&mut self, x: [f64; 3]) -> [f64; 3] {
        [self.lowpass[0].step(x[0]), self.lowpass[1].step(x[1]), self.lowpass[2].step(x[2])]
    }
}

/// Batch saturate -> median -> low-pass of a whole 3-axis site signal.
pub fn filter_site_signal(raw: &[[f64; 3]], cfg: &PipelineConfig) -> Vec<[f64; 3]> {
    let alpha = cfg.filter.alpha();
    let mut channels: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let ch: Vec<f64> = raw.iter().map(|s| s[c]).collect();
            let sat = saturate(&ch, cfg.windowing.saturation_limit);
            let med = if cfg.median_filter && !sat.is_empty() { median3(&sat) } else { sat };
            lowpass(&med, alpha)
        })
        .collect();
    let (z, y, x) = (channels.pop().unwrap(), channels.pop().unwrap(), channels.pop().unwrap());
    x.into_iter().zip(y).zip(z).map(|((a, b), c)| [a, b, c]).collect()
}

/// Per-channel min/max of one site's three axes, in filtered milli-g.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl NormStats {
    /// Maps into `[0,1]`; values outside the fitted range are clamped and a
    /// degenerate channel (`max == min`) maps to 0.5.
    pub fn apply(&self, channel: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[channel], self.max[channel]);
        if hi <= lo {
            return 0.5;
        }
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    pub fn apply_sample(&self, s: [f64; 3]) -> [f64; 3] {
        [self.apply(0, s[0]), self.apply(1, s[1]), self.apply(2, s[2])]
    }
}

pub fn fit_norm<'a>(samples: impl IntoIterator<Item = &'a [f64; 3]>) -> Result<NormStats, DspError> {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    let mut seen = false;
    for s in samples {
        seen = true;
        for c in 0..3 {
            min[c] = min[c].min(s[c]);
            max[c] = max[c].max(s[c]);
        }
    }
    if !seen {
        return Err(DspError::EmptyChannel(0));
    }
    Ok(NormStats { min, max })
}

pub fn apply_norm(signal: &[f64], stats: &NormStats, channel: usize) -> Vec<f64> {
    signal.iter().map(|&v| stats.apply(channel, v)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    NoFreeze,
    Freeze,
}

impl Label {
    pub fn target(self) -> f64 {
        match self {
            Label::NoFreeze => 0.0,
            Label::Freeze => 1.0,
        }
    }

    pub fn is_freeze(self) -> bool {
        self == Label::Freeze
    }
}

/// Label a window of annotations; `None` when any sample is irrelevant.
pub fn label_window(annotations: &[Annotation], freeze_fraction_threshold: f64) -> Option<Label> {
    let mut freeze = 0usize;
    for a in annotations {
        match a {
            Annotation::Irrelevant => return None,
            Annotation::Freeze => freeze += 1,
            Annotation::NoFreeze => {}
        }
    }
    let fraction = freeze as f64 / annotations.len() as f64;
    Some(if fraction > freeze_fraction_threshold { Label::Freeze } else { Label::NoFreeze })
}

/// A labeled window position inside a recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpan {
    pub start: usize,
    pub label: Label,
}

/// Window starts at `0, hop, 2*hop, ...`; windows touching an irrelevant
/// sample are dropped.
pub fn segment_and_label(annotations: &[Annotation], cfg: &WindowingConfig) -> Result<Vec<WindowSpan>, DspError> {
    let n = annotations.len();
    if n < cfg.window_len {
        return Err(DspError::SignalTooShort { len: n, window_len: cfg.window_len });
    }
    let count = (n - cfg.window_len) / cfg.hop() + 1;
    Ok((0..count)
        .filter_map(|k| {
            let start = k * cfg.hop();
            label_window(&annotations[start..start + cfg.window_len], cfg.freeze_fraction_threshold)
                .map(|label| WindowSpan { start, label })
        })
        .collect())
}

/// A normalized `window_len x 3` model input with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// Row-major: `data[t * 3 + c]`.
    pub data: Vec<f32>,
    pub label: Label,
    pub subject_id: u32,
    pub trial_id: u32,
    pub site: SensorSite,
    pub start_index: usize,
}

impl Window {
    pub fn from_filtered(
        filtered: &[[f64; 3]],
        stats: &NormStats,
        span: WindowSpan,
        window_len: usize,
        subject_id: u32,
        trial_id: u32,
        site: SensorSite,
    ) -> Self {
        let data = filtered[span.start..span.start + window_len]
            .iter()
            .flat_map(|s| stats.apply_sample(*s).map(|v| v as f32))
            .collect();
        Self { data, label: span.label, subject_id, trial_id, site, start_index: span.start }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A labeled window of filtered, not yet normalized samples. Normalization
/// statistics depend on the training fold, so windows are cached in this form.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredWindow {
    pub samples: Vec<[f64; 3]>,
    pub label: Label,
    pub subject_id: u32,
    pub trial_id: u32,
    pub site: SensorSite,
    pub start_index: usize,
}

impl FilteredWindow {
    pub fn normalize(&self, stats: &NormStats) -> Window {
        Window {
            data: self.samples.iter().flat_map(|s| stats.apply_sample(*s).map(|v| v as f32)).collect(),
            label: self.label,
            subject_id: self.subject_id,
            trial_id: self.trial_id,
            site: self.site,
            start_index: self.start_index,
        }
    }
}

/// Filter one site of a recording and cut it into labeled windows. Recordings
/// shorter than one window yield no windows.
pub fn site_windows(
    recording: &crate::daphnet_io::SubjectRecording,
    site: SensorSite,
    cfg: &PipelineConfig,
) -> Vec<FilteredWindow> {
    let annotations = recording.annotations();
    let Ok(spans) = segment_and_label(&annotations, &cfg.windowing) else {
        return Vec::new();
    };
    let filtered = filter_site_signal(&recording.site_signal(site), cfg);
    spans
        .into_iter()
        .map(|span| FilteredWindow {
            samples: filtered[span.start..span.start + cfg.windowing.window_len].to_vec(),
            label: span.label,
            subject_id: recording.subject_id,
            trial_id: recording.trial_id,
            site,
            start_index: span.start,
        })
        .collect()
}

/// Debug dump: one row per window, the flattened values then label and provenance.
pub fn windows_to_csv(windows: &[Window]) -> String {
    let mut out = String::new();
    if let Some(first) = windows.first() {
        for i in 0..first.data.len() {
            let _ = write!(out, "v{i},");
        }
        out.push_str("label,subject_id,trial_id,site,start_index\n");
    }
    for w in windows {
        for v in &w.data {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            u8::from(w.label.is_freeze()),
            w.subject_id,
            w.trial_id,
            w.site,
            w.start_index
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn saturation_clamps_inclusive() {
        assert_eq!(saturate(&[7000.0, -6000.0, 300.0], 5000.0), vec![5000.0, -5000.0, 300.0]);
        assert_eq!(saturate(&[0.0; 4], 5000.0), vec![0.0; 4]);
        assert_eq!(saturate(&[5000.0], 5000.0), vec![5000.0]);
    }

    #[test]
    fn default_alpha() {
        let a = FilterConfig::default().alpha();
        assert!((a - 0.6625).abs() < 1e-3, "{a}");
    }

    #[test]
    fn lowpass_identity_and_fixed_point() {
        let x = [3.0, -1.0, 7.5, 2.0];
        assert_eq!(lowpass(&x, 1.0), x.to_vec());
        assert!(lowpass(&[4.2; 50], 0.3).iter().all(|&y| y == 4.2));
    }

    #[test]
    fn lowpass_unit_step_closed_form() {
        let alpha = FilterConfig::default().alpha();
        let mut x = vec![1.0; 20];
        x[0] = 0.0;
        let y = lowpass(&x, alpha);
        for (k, yk) in y.iter().enumerate() {
            let expected = 1.0 - (1.0 - alpha).powi(k as i32);
            assert!((yk - expected).abs() < 1e-12);
        }
        assert!((y[1] - 0.6625).abs() < 1e-3);
        assert!((y[2] - 0.8861).abs() < 1e-3);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median3(&[1.0, 100.0, 1.0]), vec![1.0, 1.0, 1.0]);
        let mono = [1.0, 2.0, 3.0, 5.0, 8.0];
        assert_eq!(median3(&mono), mono.to_vec());
        assert_eq!(median3(&[5.0]), vec![5.0]);
    }

    #[test]
    fn fit_norm_examples() {
        let s = fit_norm(&[[-5000.0, 1.0, 0.0], [0.0, 2.0, 0.0], [5000.0, 3.0, 0.0]]).unwrap();
        assert_eq!(s.min, [-5000.0, 1.0, 0.0]);
        assert_eq!(s.max, [5000.0, 3.0, 0.0]);
        assert_eq!(fit_norm(std::iter::empty::<&[f64; 3]>()), Err(DspError::EmptyChannel(0)));
    }

    #[test]
    fn apply_norm_rules() {
        let s = NormStats { min: [-10.0, 0.0, 3.0], max: [10.0, 1.0, 3.0] };
        assert_eq!(apply_norm(&[-10.0, 10.0, 0.0], &s, 0), vec![0.0, 1.0, 0.5]);
        assert_eq!(apply_norm(&[-20.0, 20.0], &s, 0), vec![0.0, 1.0]);
        assert_eq!(apply_norm(&[-4.0, 3.0, 99.0], &s, 2), vec![0.5, 0.5, 0.5]);
    }

    fn annotations_with(freeze: usize, len: usize) -> Vec<Annotation> {
        (0..len).map(|i| if i < freeze { Annotation::Freeze } else { Annotation::NoFreeze }).collect()
    }

    #[test]
    fn forty_percent_threshold_is_strict() {
        let cfg = WindowingConfig::default();
        let w = segment_and_label(&annotations_with(52, 128), &cfg).unwrap();
        assert_eq!(w[0].label, Label::Freeze);
        let w = segment_and_label(&annotations_with(51, 128), &cfg).unwrap();
        assert_eq!(w[0].label, Label::NoFreeze);
    }

    #[test]
    fn irrelevant_sample_drops_window() {
        let cfg = WindowingConfig::default();
        let mut a = annotations_with(0, 256);
        a[200] = Annotation::Irrelevant;
        let w = segment_and_label(&a, &cfg).unwrap();
        // windows start at 0, 64, 128; only the last covers index 200
        let starts: Vec<usize> = w.iter().map(|s| s.start).collect();
        assert_eq!(starts, vec![0, 64]);
        assert_eq!(
            segment_and_label(&a[..100], &cfg),
            Err(DspError::SignalTooShort { len: 100, window_len: 128 })
        );
    }

    #[test]
    fn order_of_saturation_and_normalization_matters() {
        // Saturating after normalization would never clip: the crafted spike
        // dominates min/max instead of being limited to 5 g first.
        let raw = [0.0, 12000.0, 1000.0, 2000.0];
        let sat_first = saturate(&raw, 5000.0);
        let stats = fit_norm(&sat_first.iter().map(|&v| [v; 3]).collect::<Vec<_>>()).unwrap();
        let a = apply_norm(&sat_first, &stats, 0);
        let stats_raw = fit_norm(&raw.iter().map(|&v| [v; 3]).collect::<Vec<_>>()).unwrap();
        let b = saturate(&apply_norm(&raw, &stats_raw, 0), 5000.0);
        assert_eq!(a, vec![0.0, 1.0, 0.2, 0.4]);
        assert_ne!(a, b);
    }

    #[test]
    fn pipeline_golden_vector() {
        let cfg = PipelineConfig::default();
        let raw: Vec<[f64; 3]> =
            [0.0, 7000.0, 100.0, -200.0, -9000.0, 50.0].iter().map(|&v| [v, -v, 0.0]).collect();
        let out = filter_site_signal(&raw, &cfg);
        // saturate: [0,5000,100,-200,-5000,50]; median3: [0,100,100,-200,-200,50]
        let alpha = cfg.filter.alpha();
        let med = [0.0, 100.0, 100.0, -200.0, -200.0, 50.0];
        let mut y = med[0];
        for (k, m) in med.iter().enumerate() {
            if k > 0 {
                y += alpha * (m - y);
            }
            assert!((out[k][0] - y).abs() < 1e-12);
            assert!((out[k][1] + y).abs() < 1e-12);
            assert_eq!(out[k][2], 0.0);
        }
    }

    fn brute_force_window_count(ann: &[Annotation], cfg: &WindowingConfig) -> usize {
        let mut count = 0;
        let mut start = 0;
        while start + cfg.window_len <= ann.len() {
            if !ann[start..start + cfg.window_len].contains(&Annotation::Irrelevant) {
                count += 1;
            }
            start += cfg.hop();
        }
        count
    }

    proptest! {
        #[test]
        fn lowpass_is_linear(
            x in proptest::collection::vec(-1e3f64..1e3, 1..200),
            y_seed in proptest::collection::vec(-1e3f64..1e3, 200),
            a in -5.0f64..5.0,
            b in -5.0f64..5.0,
        ) {
            let alpha = FilterConfig::default().alpha();
            // zero initial state: prepend a zero sample to both inputs
            let mut xs = vec![0.0];
            xs.extend(&x);
            let mut ys = vec![0.0];
            ys.extend(&y_seed[..x.len()]);
            let combo: Vec<f64> = xs.iter().zip(&ys).map(|(p, q)| a * p + b * q).collect();
            let lhs = lowpass(&combo, alpha);
            let fx = lowpass(&xs, alpha);
            let fy = lowpass(&ys, alpha);
            for k in 0..lhs.len() {
                let rhs = a * fx[k] + b * fy[k];
                let scale = (a * fx[k]).abs() + (b * fy[k]).abs() + 1e-9;
                prop_assert!((lhs[k] - rhs).abs() / scale < 1e-9);
            }
        }

        #[test]
        fn window_count_matches_brute_force(
            codes in proptest::collection::vec(prop_oneof![8 => Just(1i64), 3 => Just(2i64), 1 => Just(0i64)], 128..1200)
        ) {
            let ann: Vec<Annotation> = codes.iter().map(|&c| Annotation::from_code(c).unwrap()).collect();
            let cfg = WindowingConfig::default();
            let windows = segment_and_label(&ann, &cfg).unwrap();
            prop_assert_eq!(windows.len(), brute_force_window_count(&ann, &cfg));
            for w in &windows {
                let slice = &ann[w.start..w.start + 128];
                let freeze = slice.iter().filter(|a| **a == Annotation::Freeze).count();
                prop_assert_eq!(w.label == Label::Freeze, freeze * 100 > 40 * 128);
            }
        }

        #[test]
        fn streaming_matches_batch(
            xs in proptest::collection::vec(-8000f64..8000.0, 1..300),
            median in any::<bool>(),
        ) {
            let cfg = PipelineConfig { median_filter: median, ..PipelineConfig::default() };
            let raw: Vec<[f64; 3]> = xs.iter().map(|&v| [v, 0.5 * v, -v]).collect();
            let batch = filter_site_signal(&raw, &cfg);
            let mut f = StreamingFilter::new(&cfg);
            let mut stream: Vec<[f64; 3]> = raw.iter().filter_map(|s| f.push(*s)).collect();
            stream.extend(f.flush());
            prop_assert_eq!(stream, batch);
        }
    }
}
