//! Nonconformity measures: how strange a `(object, label)` pair looks
//! given the proper training set. Larger is stranger.
//!
//! | underlying  | score                                                      |
//! |-------------|------------------------------------------------------------|
//! | SVM         | `-y d(x)` with `y = +1` for Active, `-1` for Inactive      |
//! | kNN         | k smallest same-label distances / k smallest other-label   |
//! | Naive Bayes | `-log p(y | x)`                                           |

mod knn;
mod nb;

pub use knn::{knn_ncm, Distance, KnnNcm};
pub use nb::{select_smoothing, train_nb, NbModel};

use rayon::prelude::*;
use thiserror::Error;

use crate::data::{Label, SparseVector};
use crate::svm::SvmModel;

#[derive(Debug, Error)]
pub enum NcmError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("reference set has {have} {label} examples, need at least k = {k}")]
    InsufficientReference { label: Label, have: usize, k: usize },
    #[error("training set has no {0} examples")]
    MissingClass(Label),
}

/// `-y d(x)`.
pub fn svm_ncm(model: &SvmModel, x: &SparseVector, y: Label) -> f64 {
    -y.sign() * model.decision_function(x)
}

pub fn nb_ncm(model: &NbModel, x: &SparseVector, y: Label) -> f64 {
    model.neg_log_posterior(x, y)
}

#[derive(Debug, Clone)]
pub enum Ncm {
    Svm(SvmModel),
    Knn(KnnNcm),
    NaiveBayes(NbModel),
}

impl Ncm {
    pub fn score(&self, x: &SparseVector, y: Label) -> f64 {
        match self {
            Ncm::Svm(m) => svm_ncm(m, x, y),
            Ncm::Knn(k) => k.score(x, y),
            Ncm::NaiveBayes(m) => nb_ncm(m, x, y),
        }
    }

    /// Element-wise [`Ncm::score`], evaluated in parallel, order preserved.
    pub fn score_batch(&self, objects: &[SparseVector], y: Label) -> Vec<f64> {
        objects.par_iter().map(|x| self.score(x, y)).collect()
    }

    pub fn name(&self) -> &'static str {
        match self {
            Ncm::Svm(_) => "svm",
            Ncm::Knn(_) => "knn",
            Ncm::NaiveBayes(_) => "nb",
        }
    }

    /// One-line parameter summary for manifests and `inspect`.
    pub fn describe(&self) -> String {
        match self {
            Ncm::Svm(m) => format!(
                "svm kernel={} c={} weights={}:{} svs={}",
                m.kernel,
                m.c,
                m.class_weights.active,
                m.class_weights.inactive,
                m.num_support_vectors()
            ),
            Ncm::Knn(k) => format!("knn k={} metric={} reference={}", k.k(), k.metric().name(), k.reference().len()),
            Ncm::NaiveBayes(m) => format!("nb smoothing={}", m.smoothing()),
        }
    }

    /// SVM decision value, when the underlying model has one.
    pub fn decision_value(&self, x: &SparseVector) -> Option<f64> {
        match self {
            Ncm::Svm(m) => Some(m.decision_function(x)),
            _ => None,
        }
    }
}
