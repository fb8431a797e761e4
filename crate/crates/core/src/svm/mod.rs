//! Class-weighted soft-margin kernel SVM.
//!
//! [`train_svm`] solves the dual on a precomputed Gram matrix;
//! [`train_cascade`] feeds blocks of the training set through a linear chain
//! of such solves, carrying support vectors forward, for sets whose full
//! Gram matrix is too large.

mod cascade;
mod cv;
mod io;
pub mod smo;

pub use cascade::{train_cascade, CascadeConfig, CascadeFit, Convergence};
pub use cv::{cross_validate, CvConfig, CvReport};
pub use io::{read_model, write_model, ModelFormatError};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{class_counts, Dataset, Label, SparseVector};
use crate::kernel::{dataset_gram, kernel_eval, GramMatrix, KernelError, KernelSpec};

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("training set is empty")]
    Empty,
    #[error("training set contains only {0} examples; both labels are required")]
    SingleClass(Label),
    #[error("model has no support vectors")]
    NoSupportVectors,
    #[error("invalid SVM configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("cross-validation: {0}")]
    CrossValidation(String),
}

/// Multipliers applied to `C` per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub active: f64,
    pub inactive: f64,
}

impl ClassWeights {
    pub const UNIFORM: ClassWeights = ClassWeights {
        active: 1.0,
        inactive: 1.0,
    };

    /// Weights inversely proportional to class frequency, scaled so the
    /// majority class gets 1 (19:1 for a 5%-positive set).
    pub fn inverse_frequency(ds: &Dataset) -> Self {
        let (na, ni) = class_counts(ds);
        if na == 0 || ni == 0 {
            return Self::UNIFORM;
        }
        let major = na.max(ni) as f64;
        ClassWeights {
            active: major / na as f64,
            inactive: major / ni as f64,
        }
    }

    pub fn get(&self, label: Label) -> f64 {
        match label {
            Label::Active => self.active,
            Label::Inactive => self.inactive,
        }
    }
}

/// How class weights are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WeightPolicy {
    /// Inverse class frequency of whatever set is being trained on.
    Auto,
    Fixed(ClassWeights),
}

impl WeightPolicy {
    pub fn resolve(&self, ds: &Dataset) -> ClassWeights {
        match self {
            WeightPolicy::Auto => ClassWeights::inverse_frequency(ds),
            WeightPolicy::Fixed(w) => *w,
        }
    }
}

impl std::str::FromStr for WeightPolicy {
    type Err = String;

    /// `auto` or `w_active:w_inactive`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(WeightPolicy::Auto);
        }
        let (a, i) = s
            .split_once(':')
            .ok_or_else(|| format!("class weights must be 'auto' or 'w+:w-', got {s:?}"))?;
        let parse = |v: &str| -> Result<f64, String> {
            match v.trim().parse::<f64>() {
                Ok(w) if w.is_finite() && w > 0.0 => Ok(w),
                _ => Err(format!("class weight {v:?} must be a positive number")),
            }
        };
        Ok(WeightPolicy::Fixed(ClassWeights {
            active: parse(a)?,
            inactive: parse(i)?,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub class_weights: ClassWeights,
    pub kernel: KernelSpec,
    /// Stop when the maximal KKT violation drops below this.
    pub tolerance: f64,
    /// Iteration budget, in multiples of the training-set size.
    pub max_passes: usize,
}

impl SvmConfig {
    pub fn new(c: f64, kernel: KernelSpec) -> Self {
        Self {
            c,
            class_weights: ClassWeights::UNIFORM,
            kernel,
            tolerance: 1e-3,
            max_passes: 10_000,
        }
    }

    pub fn validate(&self) -> Result<(), SvmError> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(SvmError::InvalidConfig(format!("C must be positive, got {}", self.c)));
        }
        let w = self.class_weights;
        if !(w.active.is_finite() && w.active > 0.0 && w.inactive.is_finite() && w.inactive > 0.0) {
            return Err(SvmError::InvalidConfig("class weights must be positive".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance <= 1e-2) {
            return Err(SvmError::InvalidConfig(format!(
                "tolerance must be in (0, 1e-2], got {}",
                self.tolerance
            )));
        }
        if self.max_passes == 0 {
            return Err(SvmError::InvalidConfig("max_passes must be at least 1".into()));
        }
        self.kernel.validate()?;
        Ok(())
    }

    /// Box bound for a training example of class `label`.
    pub fn upper_bound(&self, label: Label) -> f64 {
        self.c * self.class_weights.get(label)
    }
}

/// A trained SVM. Only examples with nonzero dual coefficients are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: KernelSpec,
    pub support_vectors: Vec<SparseVector>,
    pub sv_labels: Vec<Label>,
    /// `alpha_i * y_i`, never zero.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub class_weights: ClassWeights,
    /// Positions of the support vectors in the training set.
    pub sv_indices: Vec<usize>,
    /// Dual objective `1/2 a'Qa - e'a` at the returned iterate.
    pub objective: f64,
    pub iterations: usize,
    /// False when the iteration budget ran out first.
    pub converged: bool,
}

impl SvmModel {
    pub fn num_support_vectors(&self) -> usize {
        self.support_vectors.len()
    }

    /// Signed distance-like score `sum coef_i k(sv_i, x) + bias`.
    pub fn decision_function(&self, x: &SparseVector) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coefs)
            .map(|(sv, coef)| coef * kernel_eval(&self.kernel, sv, x))
            .sum::<f64>()
            + self.bias
    }

    pub fn predict(&self, x: &SparseVector) -> Label {
        if self.decision_function(x) > 0.0 {
            Label::Active
        } else {
            Label::Inactive
        }
    }

    /// Checks the structural invariants a deserialized model must satisfy.
    pub fn validate(&self) -> Result<(), SvmError> {
        let n = self.support_vectors.len();
        if n == 0 {
            return Err(SvmError::NoSupportVectors);
        }
        if self.sv_labels.len() != n || self.dual_coefs.len() != n {
            return Err(SvmError::InvalidConfig(
                "support vector, label and coefficient counts differ".into(),
            ));
        }
        if let Some(i) = (0..n).find(|&i| {
            let c = self.dual_coefs[i];
            c == 0.0 || !c.is_finite() || (c > 0.0) != (self.sv_labels[i] == Label::Active)
        }) {
            return Err(SvmError::InvalidConfig(format!(
                "coefficient {} of support vector {i} is zero or has the wrong sign",
                self.dual_coefs[i]
            )));
        }
        Ok(())
    }
}

fn check_two_classes(ds: &Dataset) -> Result<(), SvmError> {
    match class_counts(ds) {
        (0, 0) => Err(SvmError::Empty),
        (0, _) => Err(SvmError::SingleClass(Label::Inactive)),
        (_, 0) => Err(SvmError::SingleClass(Label::Active)),
        _ => Ok(()),
    }
}

/// Trains on the whole set at once.
pub fn train_svm(train: &Dataset, cfg: &SvmConfig) -> Result<SvmModel, SvmError> {
    cfg.validate()?;
    check_two_classes(train)?;
    let gram = dataset_gram(&cfg.kernel, train)?;
    train_with_gram(train, &gram, cfg)
}

/// Trains with a caller-supplied Gram matrix of `train` against itself.
pub fn train_with_gram(train: &Dataset, gram: &GramMatrix, cfg: &SvmConfig) -> Result<SvmModel, SvmError> {
    cfg.validate()?;
    check_two_classes(train)?;
    let n = train.len();
    if gram.rows() != n || gram.cols() != n {
        return Err(SvmError::InvalidConfig(format!(
            "Gram matrix is {}x{} for {n} examples",
            gram.rows(),
            gram.cols()
        )));
    }
    let y: Vec<f64> = train.labels().iter().map(|l| l.sign()).collect();
    let upper: Vec<f64> = train.labels().iter().map(|&l| cfg.upper_bound(l)).collect();
    let problem = smo::Problem {
        gram,
        y: &y,
        upper: &upper,
        tolerance: cfg.tolerance,
        max_iterations: cfg.max_passes.saturating_mul(n.max(1)),
    };
    let solution = smo::solve(&problem);
    if !solution.converged {
        warn!(
            "SVM solver stopped after {} iterations without reaching tolerance {}",
            solution.iterations, cfg.tolerance
        );
    }

    let sv_indices: Vec<usize> = (0..n).filter(|&i| solution.alpha[i] > 0.0).collect();
    let model = SvmModel {
        kernel: cfg.kernel,
        support_vectors: sv_indices.iter().map(|&i| train.vector(i).clone()).collect(),
        sv_labels: sv_indices.iter().map(|&i| train.label(i)).collect(),
        dual_coefs: sv_indices.iter().map(|&i| solution.alpha[i] * y[i]).collect(),
        bias: -solution.rho,
        c: cfg.c,
        class_weights: cfg.class_weights,
        sv_indices,
        objective: solution.objective,
        iterations: solution.iterations,
        converged: solution.converged,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(pairs: &[(u32, f64)]) -> SparseVector {
        SparseVector::from_pairs(pairs.iter().copied()).unwrap()
    }

    fn two_points() -> Dataset {
        Dataset::new(
            vec![sv(&[(0, 2.0)]), sv(&[(1, 2.0)])],
            vec![Label::Active, Label::Inactive],
            2,
        )
        .unwrap()
    }

    #[test]
    fn minimal_separable_case() {
        let ds = two_points();
        let cfg = SvmConfig::new(1000.0, KernelSpec::Linear);
        let model = train_svm(&ds, &cfg).unwrap();
        assert_eq!(model.num_support_vectors(), 2);
        assert!(model.decision_function(ds.vector(0)) > 0.0);
        assert!(model.decision_function(ds.vector(1)) < 0.0);
        // Hard-margin solution: d = +-1 on both points.
        assert!((model.decision_function(ds.vector(0)) - 1.0).abs() < 1e-3);
        assert!((model.decision_function(ds.vector(1)) + 1.0).abs() < 1e-3);
        let sum: f64 = model.dual_coefs.iter().sum();
        assert!(sum.abs() < 1e-12);
    }

    #[test]
    fn single_class_rejected() {
        let ds = Dataset::new(vec![sv(&[(0, 1.0)]); 3], vec![Label::Inactive; 3], 1).unwrap();
        let cfg = SvmConfig::new(1.0, KernelSpec::Tanimoto);
        assert!(matches!(train_svm(&ds, &cfg), Err(SvmError::SingleClass(Label::Inactive))));
        assert!(matches!(train_svm(&Dataset::empty(1), &cfg), Err(SvmError::Empty)));
    }

    #[test]
    fn bad_config_rejected() {
        let ds = two_points();
        let mut cfg = SvmConfig::new(1.0, KernelSpec::Linear);
        cfg.tolerance = 0.5;
        assert!(matches!(train_svm(&ds, &cfg), Err(SvmError::InvalidConfig(_))));
        cfg.tolerance = 1e-3;
        cfg.c = 0.0;
        assert!(matches!(train_svm(&ds, &cfg), Err(SvmError::InvalidConfig(_))));
    }

    #[test]
    fn empty_model_is_invalid() {
        let model = SvmModel {
            kernel: KernelSpec::Linear,
            support_vectors: vec![],
            sv_labels: vec![],
            dual_coefs: vec![],
            bias: 0.0,
            c: 1.0,
            class_weights: ClassWeights::UNIFORM,
            sv_indices: vec![],
            objective: 0.0,
            iterations: 0,
            converged: true,
        };
        assert!(matches!(model.validate(), Err(SvmError::NoSupportVectors)));
    }

    #[test]
    fn inverse_frequency_weights() {
        let labels: Vec<Label> = (0..100)
            .map(|i| if i < 5 { Label::Active } else { Label::Inactive })
            .collect();
        let ds = Dataset::new(vec![SparseVector::empty(); 100], labels, 1).unwrap();
        let w = ClassWeights::inverse_frequency(&ds);
        assert_eq!(w, ClassWeights { active: 19.0, inactive: 1.0 });
    }

    #[test]
    fn weight_policy_parsing() {
        assert_eq!("auto".parse::<WeightPolicy>().unwrap(), WeightPolicy::Auto);
        assert_eq!(
            "19:1".parse::<WeightPolicy>().unwrap(),
            WeightPolicy::Fixed(ClassWeights { active: 19.0, inactive: 1.0 })
        );
        assert!("19".parse::<WeightPolicy>().is_err());
        assert!("0:1".parse::<WeightPolicy>().is_err());
    }
}
