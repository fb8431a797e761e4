//! Inductive Mondrian conformal prediction.
//!
//! Nonconformity scores are computed once on a calibration set held out from
//! the proper training set and grouped by true label. A test object's
//! p-value for label `y` compares its score under hypothesis `y` only with
//! calibration scores of class `y`, counting the test object itself:
//!
//! ```text
//! p(y) = (#{i in cal : y_i = y, a_i >= a_test} + 1) / (#{i in cal : y_i = y} + 1)
//! ```

use std::cmp::Ordering;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{Dataset, Label, SparseVector};
use crate::ncm::Ncm;

#[derive(Debug, Error)]
pub enum ConformalError {
    #[error("calibration set has no {0} examples")]
    MissingClass(Label),
    #[error("nonconformity score is NaN for calibration example {0}")]
    NanScore(usize),
    #[error("significance level {0} is outside [0, 1]")]
    InvalidEpsilon(f64),
}

/// Calibration nonconformity scores per class, sorted ascending.
/// `+inf` scores sort after every finite score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationScores {
    active: Vec<f64>,
    inactive: Vec<f64>,
}

impl CalibrationScores {
    pub fn new(mut active: Vec<f64>, mut inactive: Vec<f64>) -> Result<Self, ConformalError> {
        for (label, scores) in [(Label::Active, &active), (Label::Inactive, &inactive)] {
            if scores.is_empty() {
                return Err(ConformalError::MissingClass(label));
            }
            if let Some(i) = scores.iter().position(|a| a.is_nan()) {
                return Err(ConformalError::NanScore(i));
            }
        }
        active.sort_by(f64::total_cmp);
        inactive.sort_by(f64::total_cmp);
        Ok(Self { active, inactive })
    }

    pub fn scores(&self, label: Label) -> &[f64] {
        match label {
            Label::Active => &self.active,
            Label::Inactive => &self.inactive,
        }
    }

    pub fn count(&self, label: Label) -> usize {
        self.scores(label).len()
    }

    pub fn len(&self) -> usize {
        self.active.len() + self.inactive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(#{a_i > alpha}, #{a_i == alpha})` within class `y`.
    fn tally(&self, alpha: f64, y: Label) -> (usize, usize) {
        let s = self.scores(y);
        let lo = s.partition_point(|a| a.total_cmp(&alpha) == Ordering::Less);
        let hi = s.partition_point(|a| a.total_cmp(&alpha) != Ordering::Greater);
        (s.len() - hi, hi - lo)
    }
}

/// Scores every calibration example under its true label.
pub fn calibrate(ncm: &Ncm, calibration: &Dataset) -> Result<CalibrationScores, ConformalError> {
    let scores: Vec<f64> = calibration
        .vectors()
        .par_iter()
        .zip(calibration.labels().par_iter())
        .map(|(x, &y)| ncm.score(x, y))
        .collect();
    if let Some(i) = scores.iter().position(|a| a.is_nan()) {
        return Err(ConformalError::NanScore(i));
    }
    let mut active = Vec::new();
    let mut inactive = Vec::new();
    for (a, &y) in scores.into_iter().zip(calibration.labels()) {
        match y {
            Label::Active => active.push(a),
            Label::Inactive => inactive.push(a),
        }
    }
    CalibrationScores::new(active, inactive)
}

/// Deterministic Mondrian p-value; ties count as "at least as strange".
pub fn p_value(cal: &CalibrationScores, alpha_test: f64, y: Label) -> f64 {
    let (greater, equal) = cal.tally(alpha_test, y);
    (greater + equal + 1) as f64 / (cal.count(y) + 1) as f64
}

/// Smoothed p-value: ties, including the test object itself, are weighted
/// by `tau` in `(0, 1]`.
pub fn smoothed_p_value(cal: &CalibrationScores, alpha_test: f64, y: Label, tau: f64) -> f64 {
    let (greater, equal) = cal.tally(alpha_test, y);
    (greater as f64 + tau * (equal + 1) as f64) / (cal.count(y) + 1) as f64
}

/// Per-class significance levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Epsilons {
    pub active: f64,
    pub inactive: f64,
}

impl Epsilons {
    pub fn new(active: f64, inactive: f64) -> Result<Self, ConformalError> {
        for e in [active, inactive] {
            if !(0.0..=1.0).contains(&e) {
                return Err(ConformalError::InvalidEpsilon(e));
            }
        }
        Ok(Self { active, inactive })
    }

    pub fn both(eps: f64) -> Result<Self, ConformalError> {
        Self::new(eps, eps)
    }

    pub fn get(&self, label: Label) -> f64 {
        match label {
            Label::Active => self.active,
            Label::Inactive => self.inactive,
        }
    }
}

/// Region prediction: the set of labels whose p-value exceeds their ε.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Active,
    Inactive,
    Empty,
    Uncertain,
}

impl Region {
    pub fn from_p_values(p_active: f64, p_inactive: f64, eps: &Epsilons) -> Region {
        match (p_active > eps.active, p_inactive > eps.inactive) {
            (true, false) => Region::Active,
            (false, true) => Region::Inactive,
            (false, false) => Region::Empty,
            (true, true) => Region::Uncertain,
        }
    }

    pub fn contains(&self, label: Label) -> bool {
        matches!(
            (self, label),
            (Region::Uncertain, _) | (Region::Active, Label::Active) | (Region::Inactive, Label::Inactive)
        )
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Region::Active => "Active",
            Region::Inactive => "Inactive",
            Region::Empty => "Empty",
            Region::Uncertain => "Uncertain",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Both p-values of one test object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValues {
    pub active: f64,
    pub inactive: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub p_active: f64,
    pub p_inactive: f64,
    pub region: Region,
    pub forced_label: Label,
    /// Set when both p-values are equal; the forced label is then Inactive.
    pub forced_tie: bool,
    /// Largest p-value.
    pub credibility: f64,
    /// One minus the smallest p-value.
    pub confidence: f64,
}

impl PredictionRecord {
    pub fn from_p_values(p: PValues, eps: &Epsilons) -> Self {
        let forced_tie = p.active == p.inactive;
        let forced_label = if p.active > p.inactive {
            Label::Active
        } else {
            Label::Inactive
        };
        PredictionRecord {
            p_active: p.active,
            p_inactive: p.inactive,
            region: Region::from_p_values(p.active, p.inactive, eps),
            forced_label,
            forced_tie,
            credibility: p.active.max(p.inactive),
            confidence: 1.0 - p.active.min(p.inactive),
        }
    }

    pub fn p_values(&self) -> PValues {
        PValues {
            active: self.p_active,
            inactive: self.p_inactive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PValueMode {
    #[default]
    Deterministic,
    /// Random tie-breaking; the draw for test object `i` depends only on
    /// `(seed, i)`.
    Smoothed { seed: u64 },
}

/// A calibrated nonconformity measure ready to produce p-values.
#[derive(Debug, Clone)]
pub struct ConformalPredictor {
    ncm: Ncm,
    calibration: CalibrationScores,
    mode: PValueMode,
}

impl ConformalPredictor {
    pub fn new(ncm: Ncm, calibration: CalibrationScores) -> Self {
        Self {
            ncm,
            calibration,
            mode: PValueMode::Deterministic,
        }
    }

    pub fn calibrate(ncm: Ncm, calibration_set: &Dataset) -> Result<Self, ConformalError> {
        let cal = calibrate(&ncm, calibration_set)?;
        Ok(Self::new(ncm, cal))
    }

    pub fn with_mode(mut self, mode: PValueMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn ncm(&self) -> &Ncm {
        &self.ncm
    }

    pub fn calibration(&self) -> &CalibrationScores {
        &self.calibration
    }

    pub fn mode(&self) -> PValueMode {
        self.mode
    }

    /// p-values of `x`, treated as the `index`-th test object (the index
    /// only matters for smoothed p-values).
    pub fn p_values(&self, x: &SparseVector, index: usize) -> PValues {
        let alpha_active = self.ncm.score(x, Label::Active);
        let alpha_inactive = self.ncm.score(x, Label::Inactive);
        match self.mode {
            PValueMode::Deterministic => PValues {
                active: p_value(&self.calibration, alpha_active, Label::Active),
                inactive: p_value(&self.calibration, alpha_inactive, Label::Inactive),
            },
            PValueMode::Smoothed { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(index as u64);
                let tau_a = 1.0 - rng.random::<f64>();
                let tau_i = 1.0 - rng.random::<f64>();
                PValues {
                    active: smoothed_p_value(&self.calibration, alpha_active, Label::Active, tau_a),
                    inactive: smoothed_p_value(&self.calibration, alpha_inactive, Label::Inactive, tau_i),
                }
            }
        }
    }

    pub fn p_values_batch(&self, objects: &[SparseVector]) -> Vec<PValues> {
        objects
            .par_iter()
            .enumerate()
            .map(|(i, x)| self.p_values(x, i))
            .collect()
    }

    pub fn predict(&self, x: &SparseVector, eps: &Epsilons) -> PredictionRecord {
        PredictionRecord::from_p_values(self.p_values(x, 0), eps)
    }

    pub fn predict_batch(&self, objects: &[SparseVector], eps: &Epsilons) -> Vec<PredictionRecord> {
        self.p_values_batch(objects)
            .into_iter()
            .map(|p| PredictionRecord::from_p_values(p, eps))
            .collect()
    }
}

/// Indices of `records` ordered by descending `p_active`, then descending
/// confidence, then input position.
pub fn rank_by_p_active(records: &[PredictionRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&records[a], &records[b]);
        rb.p_active
            .total_cmp(&ra.p_active)
            .then(rb.confidence.total_cmp(&ra.confidence))
    });
    order
}

/// Ranked indices of records whose `p_active` exceeds `eps`.
pub fn active_shortlist(records: &[PredictionRecord], eps: f64) -> Vec<usize> {
    rank_by_p_active(records)
        .into_iter()
        .filter(|&i| records[i].p_active > eps)
        .collect()
}

#[derive(Debug, Error)]
pub enum CalibrationFormatError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checksum mismatch: calibration file is corrupt or was modified")]
    Checksum,
    #[error("malformed calibration file at line {line}: {message}")]
    Malformed { line: usize, message: String },
}

const CALIBRATION_MAGIC: &str = "icp-calibration 1";

/// Text form of calibration scores:
///
/// ```text
/// icp-calibration 1
/// ncm <description of the measure that produced the scores>
/// active 2
/// -1.5
/// 0.25
/// inactive 1
/// inf
/// sha256 <hex digest of every preceding byte>
/// ```
pub fn calibration_to_string(cal: &CalibrationScores, ncm: &str) -> String {
    use std::fmt::Write as _;
    let mut out = format!("{CALIBRATION_MAGIC}\nncm {ncm}\n");
    for label in Label::BOTH {
        let scores = cal.scores(label);
        let _ = writeln!(out, "{} {}", label.as_str().to_lowercase(), scores.len());
        for a in scores {
            let _ = writeln!(out, "{a}");
        }
    }
    let digest = hex::encode(Sha256::digest(out.as_bytes()));
    let _ = writeln!(out, "sha256 {digest}");
    out
}

/// Parses [`calibration_to_string`] output into the scores and the NCM
/// description.
pub fn calibration_from_str(text: &str) -> Result<(CalibrationScores, String), CalibrationFormatError> {
    let body_end = text.rfind("sha256 ").ok_or(CalibrationFormatError::Checksum)?;
    let (body, trailer) = text.split_at(body_end);
    let expected = trailer.trim_end().strip_prefix("sha256 ").unwrap_or("");
    if hex::encode(Sha256::digest(body.as_bytes())) != expected {
        return Err(CalibrationFormatError::Checksum);
    }
    let lines: Vec<&str> = body.lines().collect();
    let bad = |line: usize, message: &str| CalibrationFormatError::Malformed {
        line: line + 1,
        message: message.into(),
    };
    if lines.first() != Some(&CALIBRATION_MAGIC) {
        return Err(bad(0, "missing header"));
    }
    let ncm = lines
        .get(1)
        .and_then(|l| l.strip_prefix("ncm "))
        .ok_or_else(|| bad(1, "expected `ncm`"))?
        .to_string();
    let mut pos = 2;
    let mut per_class = Vec::new();
    for label in Label::BOTH {
        let key = label.as_str().to_lowercase();
        let n: usize = lines
            .get(pos)
            .and_then(|l| l.strip_prefix(key.as_str()))
            .and_then(|rest| rest.trim().parse().ok())
            .ok_or_else(|| bad(pos, &format!("expected `{key} <count>`")))?;
        pos += 1;
        let mut scores = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = lines
                .get(pos)
                .and_then(|l| l.trim().parse().ok())
                .ok_or_else(|| bad(pos, "expected a score"))?;
            scores.push(a);
            pos += 1;
        }
        per_class.push(scores);
    }
    if pos != lines.len() {
        return Err(bad(pos, "unexpected trailing lines"));
    }
    let inactive = per_class.pop().unwrap_or_default();
    let active = per_class.pop().unwrap_or_default();
    let cal = CalibrationScores::new(active, inactive).map_err(|e| bad(pos, &e.to_string()))?;
    Ok((cal, ncm))
}

pub fn write_calibration(path: &std::path::Path, cal: &CalibrationScores, ncm: &str) -> Result<(), CalibrationFormatError> {
    std::fs::write(path, calibration_to_string(cal, ncm))?;
    Ok(())
}

pub fn read_calibration(path: &std::path::Path) -> Result<(CalibrationScores, String), CalibrationFormatError> {
    calibration_from_str(&std::fs::read_to_string(path)?)
}
