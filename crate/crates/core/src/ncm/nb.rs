use rayon::prelude::*;

use super::NcmError;
use crate::cv::{complement, effective_folds, stratified_folds, CvScore};
use crate::data::{class_counts, Dataset, Label, SparseVector};

/// Multinomial Naive Bayes with additive smoothing.
#[derive(Debug, Clone, PartialEq)]
pub struct NbModel {
    log_priors: [f64; 2],
    /// Per class, `log p(feature | class)` for every feature.
    log_likelihoods: [Vec<f64>; 2],
    /// Log-probability assigned to features outside the training space.
    log_unseen: [f64; 2],
    smoothing: f64,
}

impl NbModel {
    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn num_features(&self) -> usize {
        self.log_likelihoods[0].len()
    }

    pub fn log_prior(&self, label: Label) -> f64 {
        self.log_priors[label.index()]
    }

    pub fn log_likelihoods(&self, label: Label) -> &[f64] {
        &self.log_likelihoods[label.index()]
    }

    /// Unnormalized `log p(label) + sum_f x_f log p(f | label)`.
    pub fn joint_log_likelihood(&self, x: &SparseVector, label: Label) -> f64 {
        let c = label.index();
        let table = &self.log_likelihoods[c];
        self.log_priors[c]
            + x.iter()
                .map(|(i, count)| count * table.get(i as usize).copied().unwrap_or(self.log_unseen[c]))
                .sum::<f64>()
    }

    /// `-log p(label | x)`, normalized over the two classes.
    pub fn neg_log_posterior(&self, x: &SparseVector, label: Label) -> f64 {
        let diff = self.joint_log_likelihood(x, label.other()) - self.joint_log_likelihood(x, label);
        softplus(diff)
    }

    pub fn posterior(&self, x: &SparseVector, label: Label) -> f64 {
        (-self.neg_log_posterior(x, label)).exp()
    }

    pub fn predict(&self, x: &SparseVector) -> Label {
        if self.joint_log_likelihood(x, Label::Active) > self.joint_log_likelihood(x, Label::Inactive) {
            Label::Active
        } else {
            Label::Inactive
        }
    }
}

/// `ln(1 + e^d)` without overflow.
fn softplus(d: f64) -> f64 {
    if d > 0.0 {
        d + (-d).exp().ln_1p()
    } else {
        d.exp().ln_1p()
    }
}

pub fn train_nb(train: &Dataset, smoothing: f64) -> Result<NbModel, NcmError> {
    if !(smoothing.is_finite() && smoothing > 0.0) {
        return Err(NcmError::InvalidParameter(format!(
            "smoothing must be positive, got {smoothing}"
        )));
    }
    let (na, ni) = class_counts(train);
    if na == 0 || ni == 0 {
        return Err(NcmError::MissingClass(if na == 0 { Label::Active } else { Label::Inactive }));
    }
    let f = train.num_features();
    if f == 0 {
        return Err(NcmError::InvalidParameter("feature space is empty".into()));
    }
    let mut counts = [vec![0.0; f], vec![0.0; f]];
    for (x, label) in train.iter() {
        let row = &mut counts[label.index()];
        for (i, v) in x.iter() {
            row[i as usize] += v;
        }
    }
    let n = (na + ni) as f64;
    let log_priors = [(na as f64 / n).ln(), (ni as f64 / n).ln()];
    let mut log_unseen = [0.0; 2];
    let log_likelihoods = [0, 1].map(|c| {
        let total: f64 = counts[c].iter().sum();
        let log_denom = (total + smoothing * f as f64).ln();
        log_unseen[c] = smoothing.ln() - log_denom;
        counts[c].iter().map(|&k| (k + smoothing).ln() - log_denom).collect::<Vec<f64>>()
    });
    Ok(NbModel {
        log_priors,
        log_likelihoods,
        log_unseen,
        smoothing,
    })
}

/// Chooses the smoothing value with the best mean stratified CV score;
/// ties go to the smallest value.
pub fn select_smoothing(
    train: &Dataset,
    grid: &[f64],
    folds: usize,
    seed: u64,
    score: CvScore,
) -> Result<f64, NcmError> {
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    match grid.len() {
        0 => return Err(NcmError::InvalidParameter("empty smoothing grid".into())),
        1 => return Ok(grid[0]),
        _ => {}
    }
    let folds = effective_folds(train.labels(), folds)
        .ok_or_else(|| NcmError::InvalidParameter("minority class too small for 2 CV folds".into()))?;
    let held = stratified_folds(train.labels(), folds, seed);
    let per_fold: Vec<Vec<f64>> = held
        .par_iter()
        .map(|test_idx| {
            let fold_train = train.subset(&complement(train.len(), test_idx));
            let test = train.subset(test_idx);
            grid.iter()
                .map(|&s| {
                    let model = train_nb(&fold_train, s)?;
                    let predicted: Vec<Label> = test.vectors().iter().map(|x| model.predict(x)).collect();
                    Ok(score.evaluate(test.labels(), &predicted))
                })
                .collect::<Result<Vec<f64>, NcmError>>()
        })
        .collect::<Result<_, _>>()?;
    let mut best = (grid[0], f64::NEG_INFINITY);
    for (g, &s) in grid.iter().enumerate() {
        let mean = per_fold.iter().map(|f| f[g]).sum::<f64>() / folds as f64;
        if mean > best.1 {
            best = (s, mean);
        }
    }
    Ok(best.0)
}
