//! Inductive Mondrian conformal prediction for large, sparse, imbalanced
//! binary classification problems.
//!
//! The pipeline: split a labelled dataset into proper training, calibration
//! and test parts ([`data`]); fit an underlying model on the proper training
//! set and wrap it as a nonconformity measure ([`ncm`], backed by [`svm`]
//! with the kernels in [`kernel`]); score the calibration set once and turn
//! test scores into class-conditional p-values ([`conformal`]); evaluate
//! region and forced predictions ([`metrics`]). [`runner`] drives repeated
//! train/calibrate/evaluate cycles and writes CSV reports.

pub mod conformal;
pub mod cv;
pub mod data;
pub mod kernel;
pub mod metrics;
pub mod ncm;
pub mod report;
pub mod runner;
pub mod svm;
pub mod synth;

pub use conformal::{
    calibrate, p_value, rank_by_p_active, smoothed_p_value, CalibrationScores, ConformalPredictor, Epsilons,
    PValueMode, PValues, PredictionRecord, Region,
};
pub use data::{class_counts, parse_sparse_file, split_dataset, Dataset, Label, SparseVector, SplitSpec};
pub use kernel::{gram_matrix, kernel_eval, GramMatrix, KernelSpec};
pub use metrics::{rates, region_table, RatesRecord, RegionTable};
pub use ncm::{KnnNcm, NbModel, Ncm};
pub use svm::{train_cascade, train_svm, CascadeConfig, ClassWeights, SvmConfig, SvmModel};
pub use runner::{run_experiment, run_validation, ModelConfig, RunConfig, RunError, ValidateConfig, ValidityReport};
