//! Discrete-event simulation of the deployed system: three sensor nodes
//! stream 64 Hz samples through the embedded filter chain into a rolling
//! buffer and infer once per second; predictions cross a lossy, delayed link
//! to a central node that votes per epoch.
//!
//! Time is kept in integer microseconds (one sample is exactly 15 625 us).
//! Events are ordered by `(time, kind, node, sequence)` with sample arrivals
//! before deliveries before frame deadlines, so a message arriving exactly at
//! a deadline still counts.

mod synthetic;

pub use synthetic::gen_synthetic;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::daphnet_io::{SensorSite, SubjectRecording};
use crate::dsp::{label_window, Label, NormStats, PipelineConfig, StreamingFilter};
use crate::eval::{metrics, ConfusionCounts, Metrics};
use crate::quant::QModel;
use crate::secnn::{ModelError, SeCnn, WeightsBundle};
use crate::seed::rng_for;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("node site {0} appears more than once")]
    DuplicateSite(SensorSite),
    #[error("no nodes configured")]
    NoNodes,
    #[error("recording has {0} Hz samples, the nodes expect 64 Hz")]
    SampleRate(u32),
    #[error("invalid transport config: {0}")]
    Transport(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone)]
pub enum ModelHandle {
    Float(SeCnn<f32>),
    Quantized(QModel),
}

impl ModelHandle {
    pub fn predict(&self, window: &[f32]) -> Result<f32, ModelError> {
        match self {
            ModelHandle::Float(m) => m.forward(window),
            ModelHandle::Quantized(q) => q.forward_q(window),
        }
    }

    pub fn input_len(&self) -> usize {
        match self {
            ModelHandle::Float(m) => m.config.input_len,
            ModelHandle::Quantized(q) => q.config.input_len,
        }
    }
}

/// A site model plus the normalization it was trained with.
#[derive(Debug, Clone)]
pub struct NodeModel {
    pub site: SensorSite,
    pub handle: ModelHandle,
    pub norm: NormStats,
}

impl NodeModel {
    pub fn from_bundle(site: SensorSite, bundle: &WeightsBundle) -> Result<Self, ModelError> {
        Ok(Self { site, handle: ModelHandle::Float(bundle.to_model()?), norm: bundle.norm })
    }

    pub fn from_qmodel(site: SensorSite, q: QModel) -> Self {
        let norm = q.norm;
        Self { site, handle: ModelHandle::Quantized(q), norm }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub node: SensorSite,
    pub epoch: u64,
    pub probability: f64,
    pub sim_time_ms: f64,
}

/// One sensor node: filter chain, rolling buffer and model.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub site: SensorSite,
    filter: StreamingFilter,
    norm: NormStats,
    model: ModelHandle,
    buffer: VecDeque<[f32; 3]>,
    window_len: usize,
    hop: usize,
    samples_since_inference: usize,
    next_epoch: u64,
}

impl NodeState {
    pub fn new(node: NodeModel, pipeline: &PipelineConfig) -> Self {
        let window_len = node.handle.input_len();
        Self {
            site: node.site,
            filter: StreamingFilter::new(pipeline),
            norm: node.norm,
            model: node.handle,
            buffer: VecDeque::with_capacity(window_len),
            window_len,
            hop: pipeline.windowing.hop(),
            samples_since_inference: 0,
            next_epoch: 0,
        }
    }

    /// Feed one raw 3-axis sample (milli-g) arriving at `time_us`.
    pub fn ingest(&mut self, raw: [f64; 3], time_us: u64) -> Result<Option<Prediction>, ModelError> {
        match self.filter.push(raw) {
            Some(s) => self.push_filtered(s, time_us),
            None => Ok(None),
        }
    }

    /// End of stream: release the sample held by the median filter.
    pub fn flush(&mut self, time_us: u64) -> Result<Option<Prediction>, ModelError> {
        match self.filter.flush() {
            Some(s) => self.push_filtered(s, time_us),
            None => Ok(None),
        }
    }

    fn push_filtered(&mut self, s: [f64; 3], time_us: u64) -> Result<Option<Prediction>, ModelError> {
        let n = self.norm.apply_sample(s).map(|v| v as f32);
        if self.buffer.len() == self.window_len {
            self.buffer.pop_front();
        }
        self.buffer.push_back(n);
        if self.buffer.len() < self.window_len {
            return Ok(None);
        }
        let due = self.next_epoch == 0 || self.samples_since_inference + 1 >= self.hop;
        if !due {
            self.samples_since_inference += 1;
            return Ok(None);
        }
        self.samples_since_inference = 0;
        let window: Vec<f32> = self.buffer.iter().flatten().copied().collect();
        let probability = f64::from(self.model.predict(&window)?);
        let epoch = self.next_epoch;
        self.next_epoch += 1;
        Ok(Some(Prediction { node: self.site, epoch, probability, sim_time_ms: us_to_ms(time_us) }))
    }
}

fn us_to_ms(us: u64) -> f64 {
    us as f64 / 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransportConfig {
    /// Drop probability per message, in `[0, 1]`.
    pub loss_probability: f64,
    pub latency_ms: f64,
    /// Extra delay drawn uniformly from `[0, jitter_ms]`.
    pub jitter_ms: f64,
    pub seed: u64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self { loss_probability: 0.0, latency_ms: 20.0, jitter_ms: 5.0, seed: 0 }
    }
}

impl TransportConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.loss_probability) {
            return Err(SimError::Transport(format!("loss_probability {} not in [0,1]", self.loss_probability)));
        }
        if !(self.latency_ms >= 0.0 && self.jitter_ms >= 0.0 && self.latency_ms.is_finite() && self.jitter_ms.is_finite()) {
            return Err(SimError::Transport("latency and jitter must be finite and non-negative".into()));
        }
        Ok(())
    }

    fn max_delay_us(&self) -> u64 {
        ((self.latency_ms + self.jitter_ms) * 1000.0).ceil() as u64
    }
}

/// Drop or delay one message. Both random draws happen on every call so the
/// stream of outcomes does not depend on earlier results.
pub fn transport_send<R: Rng>(cfg: &TransportConfig, sent_us: u64, rng: &mut R) -> Option<u64> {
    let drop_draw: f64 = rng.random();
    let jitter_draw: f64 = rng.random();
    if drop_draw < cfg.loss_probability {
        return None;
    }
    let delay_ms = cfg.latency_ms + jitter_draw * cfg.jitter_ms;
    Some(sent_us + (delay_ms * 1000.0).round() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoteConfig {
    pub threshold: f64,
    pub quorum: usize,
    /// Optional exponential smoothing factor for each node's received
    /// probabilities (`s = a * p + (1 - a) * s_prev`). Off by default.
    pub smoothing: Option<f64>,
}

impl Default for VoteConfig {
    fn default() -> Self {
        Self { threshold: 0.4, quorum: 2, smoothing: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Alert,
    NoAlert,
}

/// Alert iff at least `quorum` received probabilities are strictly above
/// `threshold`. Lost messages abstain.
pub fn central_vote(received: &[f64], threshold: f64, quorum: usize) -> Decision {
    if received.iter().filter(|&&p| p > threshold).count() >= quorum {
        Decision::Alert
    } else {
        Decision::NoAlert
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteFrame {
    pub epoch: u64,
    /// Probabilities as voted on (smoothed when smoothing is on).
    pub received: BTreeMap<SensorSite, f64>,
    pub decision: Decision,
    pub contributing: Vec<SensorSite>,
    pub deadline_ms: f64,
    /// Window label of the epoch; `None` when it touches unannotated samples.
    pub ground_truth: Option<Label>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub epoch: u64,
    pub sim_time_ms: f64,
    pub contributors: BTreeMap<SensorSite, f64>,
}

/// Prediction plus its transport outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(flatten)]
    pub prediction: Prediction,
    pub delivered: bool,
    pub arrival_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Prediction(PredictionRecord),
    VoteFrame(VoteFrame),
    Alert(AlertEvent),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    /// Every record in event order.
    pub records: Vec<TraceRecord>,
    pub samples: usize,
    pub sample_rate_hz: u32,
}

impl SimTrace {
    pub fn predictions(&self) -> impl Iterator<Item = &PredictionRecord> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Prediction(p) => Some(p),
            _ => None,
        })
    }

    pub fn frames(&self) -> impl Iterator<Item = &VoteFrame> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::VoteFrame(f) => Some(f),
            _ => None,
        })
    }

    pub fn alerts(&self) -> impl Iterator<Item = &AlertEvent> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Alert(a) => Some(a),
            _ => None,
        })
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }

    /// Per-node probabilities by epoch.
    pub fn node_probabilities(&self, site: SensorSite) -> Vec<f64> {
        self.predictions().filter(|p| p.prediction.node == site).map(|p| p.prediction.probability).collect()
    }

    pub fn summary(&self, threshold: f64) -> SimSummary {
        let frames: Vec<&VoteFrame> = self.frames().collect();
        let truth: BTreeMap<u64, Label> = frames.iter().filter_map(|f| f.ground_truth.map(|l| (f.epoch, l))).collect();
        let mut vote = ConfusionCounts::default();
        for f in &frames {
            if let Some(l) = f.ground_truth {
                vote.add(f.decision == Decision::Alert, l.is_freeze());
            }
        }
        let mut nodes: BTreeMap<SensorSite, NodeSummary> = BTreeMap::new();
        for p in self.predictions() {
            let n = nodes.entry(p.prediction.node).or_default();
            n.predictions += 1;
            n.delivered += usize::from(p.delivered);
            if let Some(l) = truth.get(&p.prediction.epoch) {
                n.confusion.add(p.prediction.probability > threshold, l.is_freeze());
            }
        }
        for n in nodes.values_mut() {
            n.metrics = metrics(&n.confusion);
        }
        SimSummary {
            duration_s: self.samples as f64 / f64::from(self.sample_rate_hz.max(1)),
            epochs: frames.len(),
            scored_epochs: truth.len(),
            alerts: self.alerts().count(),
            vote_confusion: vote,
            vote_metrics: metrics(&vote),
            nodes,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub predictions: usize,
    pub delivered: usize,
    pub confusion: ConfusionCounts,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub duration_s: f64,
    pub epochs: usize,
    /// Epochs with a ground-truth label (no unannotated samples).
    pub scored_epochs: usize,
    pub alerts: usize,
    pub vote_confusion: ConfusionCounts,
    pub vote_metrics: Metrics,
    pub nodes: BTreeMap<SensorSite, NodeSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Sample(usize),
    Delivery { node: SensorSite, seq: u64, epoch: u64, bits: u64 },
    Deadline(u64),
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            EventKind::Sample(_) => 0,
            EventKind::Delivery { .. } => 1,
            EventKind::Deadline(_) => 2,
        }
    }
}

/// `(time, kind rank, node, seq)`; the kind payload breaks no further ties.
type EventKey = (u64, u8, usize, u64, EventKind);

fn event(time_us: u64, kind: EventKind, node: usize, seq: u64) -> Reverse<EventKey> {
    Reverse((time_us, kind.rank(), node, seq, kind))
}

/// Microseconds of sample `i` at `rate` Hz.
pub fn sample_time_us(i: usize, rate: u32) -> u64 {
    (i as u64 * 1_000_000) / u64::from(rate)
}

/// Run the whole recording through the nodes, the link and the vote.
pub fn run_simulation(
    recording: &SubjectRecording,
    nodes: Vec<NodeModel>,
    transport: &TransportConfig,
    vote: &VoteConfig,
    pipeline: &PipelineConfig,
) -> Result<SimTrace, SimError> {
    transport.validate()?;
    if nodes.is_empty() {
        return Err(SimError::NoNodes);
    }
    if recording.sample_rate_hz != 64 {
        return Err(SimError::SampleRate(recording.sample_rate_hz));
    }
    let mut seen = Vec::new();
    for n in &nodes {
        if seen.contains(&n.site) {
            return Err(SimError::DuplicateSite(n.site));
        }
        seen.push(n.site);
    }
    let mut states: Vec<NodeState> = nodes.into_iter().map(|n| NodeState::new(n, pipeline)).collect();
    states.sort_by_key(|s| s.site);
    let mut link_rngs: Vec<ChaCha8Rng> =
        states.iter().map(|s| rng_for(transport.seed, "transport", &[s.site.index() as u64])).collect();

    let rate = recording.sample_rate_hz;
    let annotations = recording.annotations();
    let wcfg = &pipeline.windowing;
    let n = recording.len();
    let mut trace = SimTrace { records: Vec::new(), samples: n, sample_rate_hz: rate };
    let mut heap: BinaryHeap<Reverse<EventKey>> = BinaryHeap::new();
    let mut open: BTreeMap<u64, BTreeMap<SensorSite, f64>> = BTreeMap::new();
    let mut smoothed: BTreeMap<SensorSite, f64> = BTreeMap::new();
    let mut seq = 0u64;
    if n > 0 {
        heap.push(event(sample_time_us(0, rate), EventKind::Sample(0), 0, 0));
    }

    while let Some(Reverse((time_us, _, _, _, kind))) = heap.pop() {
        match kind {
            EventKind::Sample(i) => {
                if i + 1 < n {
                    heap.push(event(sample_time_us(i + 1, rate), EventKind::Sample(i + 1), 0, 0));
                }
                let record = &recording.records[i];
                for (ni, state) in states.iter_mut().enumerate() {
                    let v = record.site(state.site);
                    let mut out = vec![state.ingest([f64::from(v[0]), f64::from(v[1]), f64::from(v[2])], time_us)?];
                    if i + 1 == n {
                        out.push(state.flush(time_us)?);
                    }
                    for p in out.into_iter().flatten() {
                        if !open.contains_key(&p.epoch) {
                            open.insert(p.epoch, BTreeMap::new());
                            heap.push(event(time_us + transport.max_delay_us(), EventKind::Deadline(p.epoch), 0, 0));
                        }
                        let arrival = transport_send(transport, time_us, &mut link_rngs[ni]);
                        if let Some(at) = arrival {
                            seq += 1;
                            let kind =
                                EventKind::Delivery { node: p.node, seq, epoch: p.epoch, bits: p.probability.to_bits() };
                            heap.push(event(at, kind, ni, seq));
                        }
                        trace.records.push(TraceRecord::Prediction(PredictionRecord {
                            prediction: p,
                            delivered: arrival.is_some(),
                            arrival_ms: arrival.map(us_to_ms),
                        }));
                    }
                }
            }
            EventKind::Delivery { node, epoch, bits, .. } => {
                let mut p = f64::from_bits(bits);
                if let Some(a) = vote.smoothing {
                    let s = smoothed.get(&node).map_or(p, |prev| a * p + (1.0 - a) * prev);
                    smoothed.insert(node, s);
                    p = s;
                }
                open.entry(epoch).or_default().insert(node, p);
            }
            EventKind::Deadline(epoch) => {
                let received = open.remove(&epoch).unwrap_or_default();
                let probs: Vec<f64> = received.values().copied().collect();
                let decision = central_vote(&probs, vote.threshold, vote.quorum);
                let contributing: Vec<SensorSite> =
                    received.iter().filter(|(_, &p)| p > vote.threshold).map(|(s, _)| *s).collect();
                let start = epoch as usize * wcfg.hop();
                let ground_truth = annotations
                    .get(start..start + wcfg.window_len)
                    .and_then(|a| label_window(a, wcfg.freeze_fraction_threshold));
                let deadline_ms = us_to_ms(time_us);
                let alert = (decision == Decision::Alert).then(|| AlertEvent {
                    epoch,
                    sim_time_ms: deadline_ms,
                    contributors: received.iter().filter(|(_, &p)| p > vote.threshold).map(|(s, p)| (*s, *p)).collect(),
                });
                trace.records.push(TraceRecord::VoteFrame(VoteFrame {
                    epoch,
                    received,
                    decision,
                    contributing,
                    deadline_ms,
                    ground_truth,
                }));
                if let Some(a) = alert {
                    trace.records.push(TraceRecord::Alert(a));
                }
            }
        }
    }
    Ok(trace)
}
