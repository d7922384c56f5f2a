//! Synthetic Daphnet-shaped recordings: slow gait sinusoids outside freeze
//! spans and fast trembling inside them.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::daphnet_io::{Annotation, RawRecord, SensorSite, SubjectRecording};
use crate::seed::rng_for;

const RATE_HZ: u32 = 64;
const NOISE_MG: f64 = 20.0;
/// Static offset per axis: gravity on the vertical axis.
const OFFSET_MG: [f64; 3] = [0.0, 1000.0, 0.0];

struct Oscillator {
    walk_hz: f64,
    freeze_hz: f64,
    walk_amp: f64,
    freeze_amp: f64,
    phase: f64,
}

/// A 64 Hz recording `duration_s` long; samples in `[start_s, end_s)` of any
/// segment are annotated as freeze, the rest as no-freeze.
pub fn gen_synthetic(duration_s: f64, freeze_segments: &[(f64, f64)], seed: u64) -> SubjectRecording {
    let rate = f64::from(RATE_HZ);
    let n = (duration_s * rate).round().max(0.0) as usize;
    let mut freeze = vec![false; n];
    for &(start, end) in freeze_segments {
        let (a, b) = ((start * rate).round() as usize, ((end * rate).round() as usize).min(n));
        freeze[a.min(n)..b].iter_mut().for_each(|f| *f = true);
    }

    let mut rng = rng_for(seed, "synthetic", &[]);
    let mut osc: Vec<Oscillator> = (0..9)
        .map(|_| Oscillator {
            walk_hz: rng.random_range(1.0..2.0),
            freeze_hz: rng.random_range(4.0..6.0),
            walk_amp: rng.random_range(300.0..600.0),
            freeze_amp: rng.random_range(150.0..300.0),
            phase: rng.random_range(0.0..TAU),
        })
        .collect();
    let noise = Normal::new(0.0, NOISE_MG).expect("valid sigma");

    let records = (0..n)
        .map(|i| {
            let mut sites = [[0i32; 3]; 3];
            for (k, o) in osc.iter_mut().enumerate() {
                let (hz, amp) = if freeze[i] { (o.freeze_hz, o.freeze_amp) } else { (o.walk_hz, o.walk_amp) };
                let v = OFFSET_MG[k % 3] + amp * o.phase.sin() + noise.sample(&mut rng);
                sites[k / 3][k % 3] = v.round() as i32;
                o.phase = (o.phase + TAU * hz / rate) % TAU;
            }
            RawRecord {
                time_ms: (i as i64 * 1000) / i64::from(RATE_HZ),
                ankle: sites[SensorSite::Ankle.index()],
                thigh: sites[SensorSite::Thigh.index()],
                trunk: sites[SensorSite::Trunk.index()],
                annotation: if freeze[i] { Annotation::Freeze } else { Annotation::NoFreeze },
            }
        })
        .collect();
    SubjectRecording { subject_id: 0, trial_id: 0, records, sample_rate_hz: RATE_HZ }
}
