//! Stratified k-fold splitting and the scores used to compare folds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvScore {
    /// Mean of the per-class recalls.
    #[default]
    BalancedAccuracy,
    Accuracy,
}

impl CvScore {
    pub fn evaluate(&self, truth: &[Label], predicted: &[Label]) -> f64 {
        assert_eq!(truth.len(), predicted.len());
        match self {
            CvScore::Accuracy => {
                if truth.is_empty() {
                    return 0.0;
                }
                let hits = truth.iter().zip(predicted).filter(|(t, p)| t == p).count();
                hits as f64 / truth.len() as f64
            }
            CvScore::BalancedAccuracy => {
                let mut recalls = Vec::with_capacity(2);
                for label in Label::BOTH {
                    let total = truth.iter().filter(|&&t| t == label).count();
                    if total > 0 {
                        let hits = truth
                            .iter()
                            .zip(predicted)
                            .filter(|&(&t, &p)| t == label && p == label)
                            .count();
                        recalls.push(hits as f64 / total as f64);
                    }
                }
                if recalls.is_empty() {
                    0.0
                } else {
                    recalls.iter().sum::<f64>() / recalls.len() as f64
                }
            }
        }
    }
}

impl std::str::FromStr for CvScore {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "balanced-accuracy" => Ok(CvScore::BalancedAccuracy),
            "accuracy" => Ok(CvScore::Accuracy),
            other => Err(format!("unknown CV score {other:?}")),
        }
    }
}

/// Number of folds actually usable: each class must appear in every fold.
/// Returns `None` when fewer than two folds are possible.
pub fn effective_folds(labels: &[Label], requested: usize) -> Option<usize> {
    let minority = Label::BOTH
        .iter()
        .map(|&l| labels.iter().filter(|&&x| x == l).count())
        .min()
        .unwrap_or(0);
    let folds = requested.min(minority);
    (folds >= 2).then_some(folds)
}

/// Held-out index sets for stratified k-fold CV. Each class is shuffled
/// with `seed` and dealt round-robin, so class proportions are preserved
/// per fold up to one example.
pub fn stratified_folds(labels: &[Label], folds: usize, seed: u64) -> Vec<Vec<usize>> {
    assert!(folds >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Vec::new(); folds];
    let mut offset = 0;
    for label in Label::BOTH {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            out[(k + offset) % folds].push(i);
        }
        // Start the second class where the first left off so fold sizes
        // stay balanced overall.
        offset = labels.iter().filter(|&&x| x == label).count() % folds;
    }
    for fold in &mut out {
        fold.sort_unstable();
    }
    out
}

/// Complement of `held_out` in `0..n`.
pub fn complement(n: usize, held_out: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in held_out {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_stratified_partition() {
        let labels: Vec<Label> = (0..53)
            .map(|i| if i % 9 == 0 { Label::Active } else { Label::Inactive })
            .collect();
        let folds = stratified_folds(&labels, 5, 11);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..53).collect::<Vec<_>>());
        for fold in &folds {
            let actives = fold.iter().filter(|&&i| labels[i] == Label::Active).count();
            assert!(actives == 1 || actives == 2, "{actives}");
        }
        assert_eq!(folds, stratified_folds(&labels, 5, 11));
    }

    #[test]
    fn effective_folds_limits() {
        let labels = [Label::Active, Label::Active, Label::Inactive, Label::Inactive, Label::Inactive];
        assert_eq!(effective_folds(&labels, 5), Some(2));
        assert_eq!(effective_folds(&labels[1..], 5), None);
    }

    #[test]
    fn balanced_accuracy() {
        use Label::*;
        let truth = [Active, Inactive, Inactive, Inactive];
        let pred = [Active, Active, Inactive, Inactive];
        let ba = CvScore::BalancedAccuracy.evaluate(&truth, &pred);
        assert!((ba - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(CvScore::Accuracy.evaluate(&truth, &pred), 0.75);
    }
}
