//! Daphnet dataset parsing, subject exclusion and deterministic splits.
//!
//! Each Daphnet trial file (`S01R01.txt`, ...) holds one line per 64 Hz
//! sample with 11 whitespace-separated integers: time in ms, three 3-axis
//! accelerometers (ankle, thigh, trunk) in milli-g, and the annotation.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_for;

pub const SAMPLE_RATE_HZ: u32 = 64;

/// Subjects without any freezing episode; excluded from every experiment.
pub const EXCLUDED_SUBJECTS: [u32; 2] = [5, 10];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line_no}: malformed record ({reason})")]
    MalformedLine { line_no: usize, reason: String },
    #[error("line {line_no}: time does not increase")]
    NonMonotonicTime { line_no: usize },
    #[error("no Daphnet trial files found under {0}")]
    MissingDataset(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<DatasetError>,
    },
    #[error("too few windows ({window_count}) for {fold_count} folds with test fraction {test_fraction}")]
    TooFewWindows { window_count: usize, fold_count: usize, test_fraction: f64 },
    #[error("invalid split parameters: {0}")]
    InvalidSplit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorSite {
    Ankle,
    Thigh,
    Trunk,
}

impl SensorSite {
    pub const ALL: [SensorSite; 3] = [SensorSite::Ankle, SensorSite::Thigh, SensorSite::Trunk];

    pub fn name(self) -> &'static str {
        match self {
            SensorSite::Ankle => "ankle",
            SensorSite::Thigh => "thigh",
            SensorSite::Trunk => "trunk",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl std::fmt::Display for SensorSite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Expert annotation of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Annotation {
    /// Outside the experiment (debriefing etc.); windows touching it are dropped.
    Irrelevant = 0,
    NoFreeze = 1,
    Freeze = 2,
}

impl Annotation {
    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            0 => Some(Annotation::Irrelevant),
            1 => Some(Annotation::NoFreeze),
            2 => Some(Annotation::Freeze),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawRecord {
    pub time_ms: i64,
    pub ankle: [i32; 3],
    pub thigh: [i32; 3],
    pub trunk: [i32; 3],
    pub annotation: Annotation,
}

impl RawRecord {
    pub fn site(&self, site: SensorSite) -> [i32; 3] {
        match site {
            SensorSite::Ankle => self.ankle,
            SensorSite::Thigh => self.thigh,
            SensorSite::Trunk => self.trunk,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecording {
    pub subject_id: u32,
    pub trial_id: u32,
    pub records: Vec<RawRecord>,
    pub sample_rate_hz: u32,
}

impl SubjectRecording {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Milli-g samples of one site as floating point triples.
    pub fn site_signal(&self, site: SensorSite) -> Vec<[f64; 3]> {
        self.records
            .iter()
            .map(|r| {
                let v = r.site(site);
                [f64::from(v[0]), f64::from(v[1]), f64::from(v[2])]
            })
            .collect()
    }

    pub fn annotations(&self) -> Vec<Annotation> {
        self.records.iter().map(|r| r.annotation).collect()
    }

    /// Render back to the 11-column Daphnet text layout.
    pub fn to_daphnet_text(&self) -> String {
        let mut out = String::with_capacity(self.records.len() * 40);
        for r in &self.records {
            let _ = write!(out, "{}", r.time_ms);
            for v in r.ankle.iter().chain(&r.thigh).chain(&r.trunk) {
                let _ = write!(out, " {v}");
            }
            let _ = writeln!(out, " {}", r.annotation.code());
        }
        out
    }
}

fn parse_integer(field: &str) -> Option<i64> {
    if let Ok(v) = field.parse::<i64>() {
        return Some(v);
    }
    // Some redistributions of the dataset write integral values as floats.
    let v = field.parse::<f64>().ok()?;
    (v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15).then_some(v as i64)
}

fn parse_line(line: &str, line_no: usize) -> Result<RawRecord, DatasetError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 11 {
        return Err(DatasetError::MalformedLine {
            line_no,
            reason: format!("expected 11 columns, found {}", fields.len()),
        });
    }
    let mut values = [0i64; 11];
    for (slot, field) in values.iter_mut().zip(&fields) {
        *slot = parse_integer(field).ok_or_else(|| DatasetError::MalformedLine {
            line_no,
            reason: format!("non-numeric field {field:?}"),
        })?;
    }
    let accel = |i: usize| -> Result<[i32; 3], DatasetError> {
        let mut out = [0i32; 3];
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = i32::try_from(values[i + k]).map_err(|_| DatasetError::MalformedLine {
                line_no,
                reason: "acceleration out of range".into(),
            })?;
        }
        Ok(out)
    };
    let annotation = Annotation::from_code(values[10]).ok_or_else(|| DatasetError::MalformedLine {
        line_no,
        reason: format!("annotation {} not in {{0,1,2}}", values[10]),
    })?;
    Ok(RawRecord {
        time_ms: values[0],
        ankle: accel(1)?,
        thigh: accel(4)?,
        trunk: accel(7)?,
        annotation,
    })
}

/// Parse one trial file. Empty lines are skipped; line numbers are 1-based.
pub fn parse_daphnet_file(bytes: &[u8], subject_id: u32, trial_id: u32) -> Result<SubjectRecording, DatasetError> {
    let text = std::str::from_utf8(bytes).map_err(|e| DatasetError::MalformedLine {
        line_no: 0,
        reason: format!("not UTF-8 text: {e}"),
    })?;
    let mut records: Vec<RawRecord> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let rec = parse_line(line, line_no)?;
        if let Some(prev) = records.last() {
            if rec.time_ms <= prev.time_ms {
                return Err(DatasetError::NonMonotonicTime { line_no });
            }
        }
        records.push(rec);
    }
    Ok(SubjectRecording { subject_id, trial_id, records, sample_rate_hz: SAMPLE_RATE_HZ })
}

/// `S03R02.txt` -> `(3, 2)`.
pub fn parse_trial_file_name(name: &str) -> Option<(u32, u32)> {
    let stem = name.strip_suffix(".txt")?;
    let rest = stem.strip_prefix('S')?;
    let (subject, trial) = rest.split_once('R')?;
    if subject.is_empty() || trial.is_empty() {
        return None;
    }
    Some((subject.parse().ok()?, trial.parse().ok()?))
}

fn collect_trial_files(dir: &Path, out: &mut Vec<(u32, u32, PathBuf)>) -> Result<(), DatasetError> {
    let entries = std::fs::read_dir(dir).map_err(|source| DatasetError::Io { path: dir.to_path_buf(), source })?;
    let mut paths: Vec<PathBuf> = entries
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|source| DatasetError::Io { path: dir.to_path_buf(), source })?;
    paths.sort();
    for path in paths {
        if path.is_dir() {
            collect_trial_files(&path, out)?;
        } else if let Some((s, t)) = path.file_name().and_then(|n| n.to_str()).and_then(parse_trial_file_name) {
            out.push((s, t, path));
        }
    }
    Ok(())
}

/// Load every trial under `root` (searched recursively), dropping the
/// excluded subjects. Sorted by `(subject_id, trial_id)`.
pub fn load_dataset(root: &Path) -> Result<Vec<SubjectRecording>, DatasetError> {
    if !root.is_dir() {
        return Err(DatasetError::MissingDataset(root.to_path_buf()));
    }
    let mut files = Vec::new();
    collect_trial_files(root, &mut files)?;
    if files.is_empty() {
        return Err(DatasetError::MissingDataset(root.to_path_buf()));
    }
    files.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let mut out = Vec::new();
    for (subject, trial, path) in files {
        if EXCLUDED_SUBJECTS.contains(&subject) {
            continue;
        }
        let bytes = std::fs::read(&path).map_err(|source| DatasetError::Io { path: path.clone(), source })?;
        let rec = parse_daphnet_file(&bytes, subject, trial)
            .map_err(|e| DatasetError::InFile { path: path.clone(), source: Box::new(e) })?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assignment {
    Test,
    Fold(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub fold_count: usize,
    pub test_fraction: f64,
    pub seed: u64,
    /// Indexed by window index.
    pub assignments: Vec<Assignment>,
    /// Present for subject-wise splits: subjects held out for test.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_subjects: Option<Vec<u32>>,
    /// Present for subject-wise splits: subjects per fold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fold_subjects: Option<Vec<Vec<u32>>>,
}

impl DatasetSplit {
    pub fn test_indices(&self) -> Vec<usize> {
        self.indices_where(|a| a == Assignment::Test)
    }

    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        self.indices_where(|a| a == Assignment::Fold(fold as u32))
    }

    /// Windows of every fold except `fold`.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        self.indices_where(|a| matches!(a, Assignment::Fold(f) if f as usize != fold))
    }

    fn indices_where(&self, pred: impl Fn(Assignment) -> bool) -> Vec<usize> {
        self.assignments.iter().enumerate().filter(|(_, a)| pred(**a)).map(|(i, _)| i).collect()
    }
}

fn check_split_params(fold_count: usize, test_fraction: f64) -> Result<(), DatasetError> {
    if fold_count < 2 {
        return Err(DatasetError::InvalidSplit(format!("fold_count must be >= 2, got {fold_count}")));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(DatasetError::InvalidSplit(format!("test_fraction must be in [0,1), got {test_fraction}")));
    }
    Ok(())
}

/// Window-level split over the aggregated pool: a seeded shuffle, the first
/// `round(test_fraction * n)` windows go to test, the rest are dealt to folds
/// round-robin so fold sizes differ by at most one.
pub fn make_split(window_count: usize, fold_count: usize, test_fraction: f64, seed: u64) -> Result<DatasetSplit, DatasetError> {
    check_split_params(fold_count, test_fraction)?;
    let too_few = DatasetError::TooFewWindows { window_count, fold_count, test_fraction };
    if (window_count as f64) < fold_count as f64 / (1.0 - test_fraction) {
        return Err(too_few);
    }
    let n_test = (test_fraction * window_count as f64).round() as usize;
    if window_count - n_test < fold_count {
        return Err(too_few);
    }
    let mut order: Vec<usize> = (0..window_count).collect();
    order.shuffle(&mut rng_for(seed, "split", &[]));
    let mut assignments = vec![Assignment::Test; window_count];
    for (rank, &w) in order.iter().enumerate().skip(n_test) {
        assignments[w] = Assignment::Fold(((rank - n_test) % fold_count) as u32);
    }
    Ok(DatasetSplit { fold_count, test_fraction, seed, assignments, test_subjects: None, fold_subjects: None })
}

/// Subject-wise split: whole subjects are assigned to the test set or a fold.
/// `window_subjects[i]` is the subject of window `i`.
pub fn make_subject_split(
    window_subjects: &[u32],
    fold_count: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit, DatasetError> {
    check_split_params(fold_count, test_fraction)?;
    let subjects: Vec<u32> = window_subjects.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let n_test = (test_fraction * subjects.len() as f64).round() as usize;
    if subjects.len() < n_test + fold_count {
        return Err(DatasetError::TooFewWindows { window_count: window_subjects.len(), fold_count, test_fraction });
    }
    let mut order = subjects.clone();
    order.shuffle(&mut rng_for(seed, "subject-split", &[]));
    let mut test_subjects: Vec<u32> = order[..n_test].to_vec();
    test_subjects.sort_unstable();
    let mut fold_subjects = vec![Vec::new(); fold_count];
    for (rank, &s) in order[n_test..].iter().enumerate() {
        fold_subjects[rank % fold_count].push(s);
    }
    for f in &mut fold_subjects {
        f.sort_unstable();
    }
    let assignments = window_subjects
        .iter()
        .map(|s| {
            if test_subjects.contains(s) {
                Assignment::Test
            } else {
                let fold = fold_subjects.iter().position(|f| f.contains(s)).expect("subject assigned");
                Assignment::Fold(fold as u32)
            }
        })
        .collect();
    Ok(DatasetSplit {
        fold_count,
        test_fraction,
        seed,
        assignments,
        test_subjects: Some(test_subjects),
        fold_subjects: Some(fold_subjects),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_eleven_column_line() {
        let rec = parse_daphnet_file(b"1000 60 -970 40 10 -990 20 5 -1010 30 1\n", 1, 1).unwrap();
        assert_eq!(
            rec.records[0],
            RawRecord {
                time_ms: 1000,
                ankle: [60, -970, 40],
                thigh: [10, -990, 20],
                trunk: [5, -1010, 30],
                annotation: Annotation::NoFreeze,
            }
        );
        assert_eq!(rec.sample_rate_hz, 64);
    }

    #[test]
    fn annotation_two_is_freeze() {
        let rec = parse_daphnet_file(b"15 0 0 0 0 0 0 0 0 0 2", 2, 1).unwrap();
        assert_eq!(rec.records[0].annotation, Annotation::Freeze);
    }

    #[test]
    fn short_line_is_malformed() {
        let err = parse_daphnet_file(b"1000 60 -970", 1, 1).unwrap_err();
        assert!(matches!(err, DatasetError::MalformedLine { line_no: 1, .. }));
    }

    #[test]
    fn non_numeric_and_bad_annotation_are_malformed() {
        let err = parse_daphnet_file(b"\n1000 60 x 40 10 -990 20 5 -1010 30 1", 1, 1).unwrap_err();
        assert!(matches!(err, DatasetError::MalformedLine { line_no: 2, .. }));
        let err = parse_daphnet_file(b"1000 60 1 40 10 -990 20 5 -1010 30 3", 1, 1).unwrap_err();
        assert!(matches!(err, DatasetError::MalformedLine { line_no: 1, .. }));
    }

    #[test]
    fn empty_lines_skipped_and_time_must_increase() {
        let ok = parse_daphnet_file(b"15 0 0 0 0 0 0 0 0 0 1\n\n   \n31 0 0 0 0 0 0 0 0 0 1\n", 1, 1).unwrap();
        assert_eq!(ok.len(), 2);
        let err = parse_daphnet_file(b"15 0 0 0 0 0 0 0 0 0 1\n\n10 0 0 0 0 0 0 0 0 0 1\n", 1, 1).unwrap_err();
        assert!(matches!(err, DatasetError::NonMonotonicTime { line_no: 3 }));
    }

    #[test]
    fn float_formatted_integers_are_accepted() {
        let rec = parse_daphnet_file(b"15.0 1.0 2 3 4 5 6 7 8 9 1", 1, 1).unwrap();
        assert_eq!(rec.records[0].ankle, [1, 2, 3]);
        assert!(parse_daphnet_file(b"15.5 1 2 3 4 5 6 7 8 9 1", 1, 1).is_err());
    }

    #[test]
    fn trial_file_names() {
        assert_eq!(parse_trial_file_name("S01R02.txt"), Some((1, 2)));
        assert_eq!(parse_trial_file_name("S10R01.txt"), Some((10, 1)));
        assert_eq!(parse_trial_file_name("README.txt"), None);
        assert_eq!(parse_trial_file_name("S01R01.csv"), None);
    }

    #[test]
    fn split_sizes_for_hundred_windows() {
        let split = make_split(100, 4, 0.2, 7).unwrap();
        assert_eq!(split.test_indices().len(), 20);
        for f in 0..4 {
            assert_eq!(split.fold_indices(f).len(), 20);
        }
        assert_eq!(split, make_split(100, 4, 0.2, 7).unwrap());
        assert_ne!(split.assignments, make_split(100, 4, 0.2, 8).unwrap().assignments);
    }

    #[test]
    fn split_rejects_too_few_windows() {
        assert!(matches!(make_split(3, 4, 0.2, 1), Err(DatasetError::TooFewWindows { .. })));
        assert!(matches!(make_split(4, 4, 0.2, 1), Err(DatasetError::TooFewWindows { .. })));
        assert!(make_split(5, 4, 0.2, 1).is_ok());
    }

    #[test]
    fn subject_split_keeps_subjects_whole() {
        let subjects: Vec<u32> = [1, 2, 3, 4, 6, 7, 8, 9].iter().flat_map(|&s| std::iter::repeat(s).take(10)).collect();
        let split = make_subject_split(&subjects, 4, 0.2, 3).unwrap();
        assert_eq!(split.test_subjects.as_ref().unwrap().len(), 2);
        let folds = split.fold_subjects.as_ref().unwrap();
        assert_eq!(folds.iter().map(Vec::len).sum::<usize>(), 6);
        for (i, a) in split.assignments.iter().enumerate() {
            let s = subjects[i];
            match a {
                Assignment::Test => assert!(split.test_subjects.as_ref().unwrap().contains(&s)),
                Assignment::Fold(f) => assert!(folds[*f as usize].contains(&s)),
            }
        }
    }
}
