//! CSV rendering of predictions, tables and sweeps.
//!
//! Raw values use Rust's shortest round-trip float formatting. Averages over repeated runs are
//! rounded to two decimals (counts) or four decimals (rates). Undefined
//! ratios are written as `NA`.

use std::fmt::Write as _;

use crate::conformal::PredictionRecord;
use crate::data::{Dataset, Label};
use crate::metrics::{PrCurve, PrPoint, RatesRecord, RegionTable, SweepRow, ThresholdSweep};

pub const NA: &str = "NA";

pub fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn opt4(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| format!("{x:.4}"))
}

/// Mean of the defined values, or `None` if there are none.
pub fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn predictions_csv(records: &[PredictionRecord], test: &Dataset) -> String {
    let mut out = String::from("id,p_active,p_inactive,region,forced,credibility,confidence\n");
    for (i, r) in records.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            test.id(i),
            r.p_active,
            r.p_inactive,
            r.region,
            r.forced_label,
            r.credibility,
            r.confidence
        );
    }
    out
}

pub fn log10_pvalues_csv(records: &[PredictionRecord], truth: &[Label]) -> String {
    let mut out = String::from("log10_p_active,log10_p_inactive,true_label\n");
    for (r, t) in records.iter().zip(truth) {
        let _ = writeln!(out, "{},{},{}", r.p_active.log10(), r.p_inactive.log10(), t);
    }
    out
}

pub const REGION_HEADER: &str = "active_pred_active,inactive_pred_active,inactive_pred_inactive,active_pred_inactive,empty,uncertain";
pub const RATES_HEADER: &str = "active_error_rate,inactive_error_rate,precision,recall";

pub fn region_cells(t: &RegionTable) -> String {
    t.six_way().map(|v| v.to_string()).join(",")
}

pub fn region_cells_mean(t: &RegionTable) -> String {
    t.six_way().map(|v| format!("{v:.2}")).join(",")
}

pub fn rates_cells(r: &RatesRecord) -> String {
    [r.active_error_rate, r.inactive_error_rate, r.precision, r.recall]
        .map(opt)
        .join(",")
}

pub fn rates_cells_mean(r: &RatesRecord) -> String {
    [r.active_error_rate, r.inactive_error_rate, r.precision, r.recall]
        .map(opt4)
        .join(",")
}

pub fn mean_rates(rows: &[RatesRecord]) -> RatesRecord {
    RatesRecord {
        active_error_rate: mean_defined(rows.iter().map(|r| r.active_error_rate)),
        inactive_error_rate: mean_defined(rows.iter().map(|r| r.inactive_error_rate)),
        precision: mean_defined(rows.iter().map(|r| r.precision)),
        recall: mean_defined(rows.iter().map(|r| r.recall)),
    }
}

/// Region-table rows followed by a `mean` row.
pub fn region_table_csv(per_cycle: &[(usize, RegionTable)]) -> String {
    let mut out = format!("cycle,{REGION_HEADER},total\n");
    for (c, t) in per_cycle {
        let _ = writeln!(out, "{c},{},{}", region_cells(t), t.total());
    }
    if !per_cycle.is_empty() {
        let tables: Vec<RegionTable> = per_cycle.iter().map(|(_, t)| *t).collect();
        let m = RegionTable::mean(&tables);
        let _ = writeln!(out, "mean,{},{:.2}", region_cells_mean(&m), m.total());
    }
    out
}

pub fn rates_csv(per_cycle: &[(usize, RegionTable, RatesRecord)]) -> String {
    let mut out = format!("cycle,n_active,n_inactive,{RATES_HEADER}\n");
    for (c, t, r) in per_cycle {
        let _ = writeln!(out, "{c},{},{},{}", t.n_active(), t.n_inactive(), rates_cells(r));
    }
    if !per_cycle.is_empty() {
        let tables: Vec<RegionTable> = per_cycle.iter().map(|(_, t, _)| *t).collect();
        let m = RegionTable::mean(&tables);
        let rows: Vec<RatesRecord> = per_cycle.iter().map(|(_, _, r)| *r).collect();
        let _ = writeln!(
            out,
            "mean,{:.2},{:.2},{}",
            m.n_active(),
            m.n_inactive(),
            rates_cells_mean(&mean_rates(&rows))
        );
    }
    out
}

/// Sweep rows (one per cycle and threshold) followed by one `mean` row per
/// threshold, in grid order.
pub fn sweep_csv(per_cycle: &[(usize, Vec<SweepRow>)]) -> String {
    let mut out = format!("cycle,eps_active,eps_inactive,{REGION_HEADER},{RATES_HEADER}\n");
    for (c, rows) in per_cycle {
        for r in rows {
            let _ = writeln!(
                out,
                "{c},{},{},{},{}",
                r.eps.active,
                r.eps.inactive,
                region_cells(&r.table),
                rates_cells(&r.rates)
            );
        }
    }
    let grid_len = per_cycle.first().map_or(0, |(_, rows)| rows.len());
    for g in 0..grid_len {
        let tables: Vec<RegionTable> = per_cycle.iter().map(|(_, rows)| rows[g].table).collect();
        let rates: Vec<RatesRecord> = per_cycle.iter().map(|(_, rows)| rows[g].rates).collect();
        let eps = per_cycle[0].1[g].eps;
        let _ = writeln!(
            out,
            "mean,{},{},{},{}",
            eps.active,
            eps.inactive,
            region_cells_mean(&RegionTable::mean(&tables)),
            rates_cells_mean(&mean_rates(&rates))
        );
    }
    out
}

fn pr_cells(p: &PrPoint) -> String {
    format!(
        "{},{},{},{},{}",
        p.threshold,
        p.selected,
        p.true_positives,
        opt(p.precision),
        opt(p.recall)
    )
}

pub fn pr_curves_csv(per_cycle: &[(usize, Vec<PrCurve>)]) -> String {
    let mut out = String::from("cycle,method,threshold,selected,true_positives,precision,recall\n");
    for (c, curves) in per_cycle {
        for curve in curves {
            for p in &curve.points {
                let _ = writeln!(out, "{c},{},{}", curve.method.as_str(), pr_cells(p));
            }
        }
    }
    out
}

pub fn cred_conf_csv(per_cycle: &[(usize, Vec<(ThresholdSweep, Vec<PrPoint>)>)]) -> String {
    let mut out = String::from("cycle,varied,fixed_value,threshold,selected,true_positives,precision,recall\n");
    for (c, sweeps) in per_cycle {
        for (sweep, points) in sweeps {
            let (varied, fixed) = match sweep {
                ThresholdSweep::VaryConfidence { credibility } => ("confidence", credibility),
                ThresholdSweep::VaryCredibility { confidence } => ("credibility", confidence),
            };
            for p in points {
                let _ = writeln!(out, "{c},{varied},{fixed},{}", pr_cells(p));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_row_uses_two_decimals() {
        let a = RegionTable {
            active_pred_active: 1.0,
            uncertain_inactive: 2.0,
            ..Default::default()
        };
        let b = RegionTable {
            active_pred_active: 2.0,
            uncertain_inactive: 1.0,
            ..Default::default()
        };
        let csv = region_table_csv(&[(0, a), (1, b)]);
        let last = csv.lines().last().unwrap();
        assert_eq!(last, "mean,1.50,0.00,0.00,0.00,0.00,1.50,3.00");
    }

    #[test]
    fn undefined_written_as_na() {
        assert_eq!(opt(None), "NA");
        assert_eq!(mean_defined([None, Some(1.0), Some(3.0)]), Some(2.0));
        assert_eq!(mean_defined([None, None]), None);
    }
}
