use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_with_gram, SvmConfig, SvmError};
use crate::cv::{complement, effective_folds, stratified_folds, CvScore};
use crate::data::{Dataset, Label};
use crate::kernel::{dataset_gram, GramMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
    pub score: CvScore,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            score: CvScore::BalancedAccuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub best_c: f64,
    /// `(C, mean score)` in ascending C order; empty when the grid had a
    /// single value and nothing was evaluated.
    pub scores: Vec<(f64, f64)>,
    pub folds: usize,
}

pub(crate) fn sub_gram(gram: &GramMatrix, idx: &[usize]) -> GramMatrix {
    let n = idx.len();
    let mut values = Vec::with_capacity(n * n);
    for &i in idx {
        let row = gram.row(i);
        values.extend(idx.iter().map(|&j| row[j]));
    }
    GramMatrix::from_values(n, n, values)
}

/// Picks the `C` from `c_grid` with the best mean stratified k-fold score.
/// Ties go to the smallest `C`. If the minority class is smaller than the
/// requested fold count, the fold count is reduced; fewer than two usable
/// folds is an error.
pub fn cross_validate(
    train: &Dataset,
    base: &SvmConfig,
    c_grid: &[f64],
    cv: &CvConfig,
) -> Result<CvReport, SvmError> {
    let mut grid: Vec<f64> = c_grid.to_vec();
    if grid.is_empty() {
        return Err(SvmError::CrossValidation("empty C grid".into()));
    }
    if let Some(c) = grid.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
        return Err(SvmError::CrossValidation(format!("C grid value {c} is not positive")));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    if grid.len() == 1 {
        return Ok(CvReport {
            best_c: grid[0],
            scores: Vec::new(),
            folds: 0,
        });
    }
    if cv.folds < 2 {
        return Err(SvmError::CrossValidation("at least 2 folds are required".into()));
    }
    let folds = effective_folds(train.labels(), cv.folds).ok_or_else(|| {
        SvmError::CrossValidation("minority class too small for 2 stratified folds".into())
    })?;
    if folds < cv.folds {
        log::warn!("reducing CV folds from {} to {folds} for the minority class size", cv.folds);
    }

    let gram = dataset_gram(&base.kernel, train)?;
    let held_out = stratified_folds(train.labels(), folds, cv.seed);

    // fold-major so each fold's sub-Gram is built once
    let per_fold: Vec<Vec<f64>> = held_out
        .par_iter()
        .map(|test_idx| -> Result<Vec<f64>, SvmError> {
            let train_idx = complement(train.len(), test_idx);
            let fold_train = train.subset(&train_idx);
            let fold_gram = sub_gram(&gram, &train_idx);
            let truth: Vec<Label> = test_idx.iter().map(|&i| train.label(i)).collect();
            grid.iter()
                .map(|&c| {
                    let cfg = SvmConfig { c, ..*base };
                    let model = train_with_gram(&fold_train, &fold_gram, &cfg)?;
                    let predicted: Vec<Label> = test_idx
                        .iter()
                        .map(|&t| {
                            let row = gram.row(t);
                            let d = model
                                .sv_indices
                                .iter()
                                .zip(&model.dual_coefs)
                                .map(|(&s, coef)| coef * row[train_idx[s]])
                                .sum::<f64>()
                                + model.bias;
                            if d > 0.0 {
                                Label::Active
                            } else {
                                Label::Inactive
                            }
                        })
                        .collect();
                    Ok(cv.score.evaluate(&truth, &predicted))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;

    let scores: Vec<(f64, f64)> = grid
        .iter()
        .enumerate()
        .map(|(g, &c)| {
            let mean = per_fold.iter().map(|f| f[g]).sum::<f64>() / folds as f64;
            (c, mean)
        })
        .collect();
    let mut best = scores[0];
    for &(c, s) in &scores[1..] {
        if s > best.1 {
            best = (c, s);
        }
    }
    Ok(CvReport {
        best_c: best.0,
        scores,
        folds,
    })
}
