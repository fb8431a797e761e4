//! Region-prediction tallies, per-class error rates, precision/recall, and
//! the threshold sweeps built on them.
//!
//! Every sweep works from one fixed set of p-values (and decision values);
//! thresholds are applied after the fact.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::{Epsilons, PValues, PredictionRecord, Region};
use crate::data::Label;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{records} records but {truth} true labels")]
    LengthMismatch { records: usize, truth: usize },
    #[error("significance level {0} is outside [0, 1]")]
    InvalidEpsilon(f64),
}

fn check_len(records: usize, truth: usize) -> Result<(), MetricsError> {
    if records == truth {
        Ok(())
    } else {
        Err(MetricsError::LengthMismatch { records, truth })
    }
}

/// Region predictions cross-tabulated against the true label. Counts are
/// stored as reals; averaged tables use the same type.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegionTable {
    pub active_pred_active: f64,
    pub inactive_pred_active: f64,
    pub inactive_pred_inactive: f64,
    pub active_pred_inactive: f64,
    pub empty_active: f64,
    pub empty_inactive: f64,
    pub uncertain_active: f64,
    pub uncertain_inactive: f64,
}

impl RegionTable {
    pub fn empty(&self) -> f64 {
        self.empty_active + self.empty_inactive
    }

    pub fn uncertain(&self) -> f64 {
        self.uncertain_active + self.uncertain_inactive
    }

    /// True Actives covered by the table.
    pub fn n_active(&self) -> f64 {
        self.active_pred_active + self.active_pred_inactive + self.empty_active + self.uncertain_active
    }

    pub fn n_inactive(&self) -> f64 {
        self.inactive_pred_active + self.inactive_pred_inactive + self.empty_inactive + self.uncertain_inactive
    }

    pub fn total(&self) -> f64 {
        self.n_active() + self.n_inactive()
    }

    /// The six reported columns: AA, IA, II, AI, Empty, Uncertain.
    pub fn six_way(&self) -> [f64; 6] {
        [
            self.active_pred_active,
            self.inactive_pred_active,
            self.inactive_pred_inactive,
            self.active_pred_inactive,
            self.empty(),
            self.uncertain(),
        ]
    }

    fn add(&mut self, region: Region, truth: Label) {
        let cell = match (region, truth) {
            (Region::Active, Label::Active) => &mut self.active_pred_active,
            (Region::Active, Label::Inactive) => &mut self.inactive_pred_active,
            (Region::Inactive, Label::Inactive) => &mut self.inactive_pred_inactive,
            (Region::Inactive, Label::Active) => &mut self.active_pred_inactive,
            (Region::Empty, Label::Active) => &mut self.empty_active,
            (Region::Empty, Label::Inactive) => &mut self.empty_inactive,
            (Region::Uncertain, Label::Active) => &mut self.uncertain_active,
            (Region::Uncertain, Label::Inactive) => &mut self.uncertain_inactive,
        };
        *cell += 1.0;
    }

    /// Cell-wise mean. Sums are preserved: the mean table totals the mean
    /// of the input totals.
    pub fn mean(tables: &[RegionTable]) -> RegionTable {
        if tables.is_empty() {
            return RegionTable::default();
        }
        let n = tables.len() as f64;
        let mut out = RegionTable::default();
        for t in tables {
            out.active_pred_active += t.active_pred_active;
            out.inactive_pred_active += t.inactive_pred_active;
            out.inactive_pred_inactive += t.inactive_pred_inactive;
            out.active_pred_inactive += t.active_pred_inactive;
            out.empty_active += t.empty_active;
            out.empty_inactive += t.empty_inactive;
            out.uncertain_active += t.uncertain_active;
            out.uncertain_inactive += t.uncertain_inactive;
        }
        out.active_pred_active /= n;
        out.inactive_pred_active /= n;
        out.inactive_pred_inactive /= n;
        out.active_pred_inactive /= n;
        out.empty_active /= n;
        out.empty_inactive /= n;
        out.uncertain_active /= n;
        out.uncertain_inactive /= n;
        out
    }
}

pub fn region_table(records: &[PredictionRecord], truth: &[Label]) -> Result<RegionTable, MetricsError> {
    check_len(records.len(), truth.len())?;
    Ok(tabulate(records.iter().map(|r| r.region), truth))
}

fn tabulate(regions: impl Iterator<Item = Region>, truth: &[Label]) -> RegionTable {
    let mut table = RegionTable::default();
    for (region, &t) in regions.zip(truth) {
        table.add(region, t);
    }
    table
}

/// Error rates and precision/recall for the Active class. `None` marks a
/// ratio with a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RatesRecord {
    /// Fraction of true Actives whose region excludes Active.
    pub active_error_rate: Option<f64>,
    /// Fraction of true Inactives whose region excludes Inactive.
    pub inactive_error_rate: Option<f64>,
    /// AA / (AA + IA).
    pub precision: Option<f64>,
    /// AA / true Actives.
    pub recall: Option<f64>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

/// Rates from a (possibly averaged) table and the true class sizes.
pub fn rates(table: &RegionTable, n_active: f64, n_inactive: f64) -> RatesRecord {
    RatesRecord {
        active_error_rate: ratio(table.active_pred_inactive + table.empty_active, n_active),
        inactive_error_rate: ratio(table.inactive_pred_active + table.empty_inactive, n_inactive),
        precision: ratio(
            table.active_pred_active,
            table.active_pred_active + table.inactive_pred_active,
        ),
        recall: ratio(table.active_pred_active, n_active),
    }
}

/// One threshold setting of a significance sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: Epsilons,
    pub table: RegionTable,
    pub rates: RatesRecord,
}

fn sweep_row(p_values: &[PValues], truth: &[Label], eps: Epsilons) -> SweepRow {
    let table = tabulate(
        p_values.iter().map(|p| Region::from_p_values(p.active, p.inactive, &eps)),
        truth,
    );
    let rates = rates(&table, table.n_active(), table.n_inactive());
    SweepRow { eps, table, rates }
}

fn checked_eps(active: f64, inactive: f64) -> Result<Epsilons, MetricsError> {
    for e in [active, inactive] {
        if !(0.0..=1.0).contains(&e) {
            return Err(MetricsError::InvalidEpsilon(e));
        }
    }
    Ok(Epsilons { active, inactive })
}

/// The same ε applied to both classes, one row per grid value.
pub fn eps_sweep(p_values: &[PValues], truth: &[Label], grid: &[f64]) -> Result<Vec<SweepRow>, MetricsError> {
    check_len(p_values.len(), truth.len())?;
    grid.iter()
        .map(|&e| Ok(sweep_row(p_values, truth, checked_eps(e, e)?)))
        .collect()
}

/// ε for Active held fixed while ε for Inactive varies.
pub fn asymmetric_sweep(
    p_values: &[PValues],
    truth: &[Label],
    eps_active: f64,
    eps_inactive_grid: &[f64],
) -> Result<Vec<SweepRow>, MetricsError> {
    check_len(p_values.len(), truth.len())?;
    eps_inactive_grid
        .iter()
        .map(|&e| Ok(sweep_row(p_values, truth, checked_eps(eps_active, e)?)))
        .collect()
}

/// Precision/recall of one selection of "predicted Active" objects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub selected: usize,
    pub true_positives: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

fn pr_point<F>(threshold: f64, truth: &[Label], mut select: F) -> PrPoint
where
    F: FnMut(usize) -> bool,
{
    let mut selected = 0;
    let mut tp = 0;
    for (i, &t) in truth.iter().enumerate() {
        if select(i) {
            selected += 1;
            if t == Label::Active {
                tp += 1;
            }
        }
    }
    let n_active = truth.iter().filter(|&&t| t == Label::Active).count();
    PrPoint {
        threshold,
        selected,
        true_positives: tp,
        precision: ratio(tp as f64, selected as f64),
        recall: ratio(tp as f64, n_active as f64),
    }
}

/// Which of the two forced-prediction thresholds is held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ThresholdSweep {
    /// Credibility threshold fixed; grid varies the confidence threshold.
    VaryConfidence { credibility: f64 },
    /// Confidence threshold fixed; grid varies the credibility threshold.
    VaryCredibility { confidence: f64 },
}

/// Selects forced-Active records with credibility and confidence strictly
/// above their thresholds, one point per grid value.
pub fn credibility_confidence_sweep(
    records: &[PredictionRecord],
    truth: &[Label],
    sweep: ThresholdSweep,
    grid: &[f64],
) -> Result<Vec<PrPoint>, MetricsError> {
    check_len(records.len(), truth.len())?;
    Ok(grid
        .iter()
        .map(|&g| {
            let (cred, conf) = match sweep {
                ThresholdSweep::VaryConfidence { credibility } => (credibility, g),
                ThresholdSweep::VaryCredibility { confidence } => (g, confidence),
            };
            pr_point(g, truth, |i| {
                let r = &records[i];
                r.forced_label == Label::Active && r.credibility > cred && r.confidence > conf
            })
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrMethod {
    /// Threshold on the underlying SVM decision value.
    Decision,
    /// Region prediction with ε for Inactive varied.
    EpsInactive,
    /// Forced-Active predictions above a credibility threshold.
    Credibility,
}

impl PrMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            PrMethod::Decision => "decision",
            PrMethod::EpsInactive => "eps_inactive",
            PrMethod::Credibility => "credibility",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrGrids {
    pub decision_thresholds: Vec<f64>,
    pub eps_active: f64,
    pub eps_inactive: Vec<f64>,
    pub credibility: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub method: PrMethod,
    pub points: Vec<PrPoint>,
}

/// Precision-vs-recall curves for the three selection methods. The decision
/// curve is omitted when no decision values are supplied.
pub fn three_method_pr(
    records: &[PredictionRecord],
    decision_values: Option<&[f64]>,
    truth: &[Label],
    grids: &PrGrids,
) -> Result<Vec<PrCurve>, MetricsError> {
    check_len(records.len(), truth.len())?;
    if !(0.0..=1.0).contains(&grids.eps_active) {
        return Err(MetricsError::InvalidEpsilon(grids.eps_active));
    }
    let mut curves = Vec::with_capacity(3);
    if let Some(d) = decision_values {
        check_len(d.len(), truth.len())?;
        curves.push(PrCurve {
            method: PrMethod::Decision,
            points: grids
                .decision_thresholds
                .iter()
                .map(|&t| pr_point(t, truth, |i| d[i] > t))
                .collect(),
        });
    }
    let eps_points = grids
        .eps_inactive
        .iter()
        .map(|&e| {
            let eps = checked_eps(grids.eps_active, e)?;
            Ok(pr_point(e, truth, |i| {
                Region::from_p_values(records[i].p_active, records[i].p_inactive, &eps) == Region::Active
            }))
        })
        .collect::<Result<Vec<_>, MetricsError>>()?;
    curves.push(PrCurve {
        method: PrMethod::EpsInactive,
        points: eps_points,
    });
    curves.push(PrCurve {
        method: PrMethod::Credibility,
        points: grids
            .credibility
            .iter()
            .map(|&t| {
                pr_point(t, truth, |i| {
                    records[i].forced_label == Label::Active && records[i].credibility > t
                })
            })
            .collect(),
    });
    Ok(curves)
}
