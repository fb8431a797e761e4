//! Repeated train / calibrate / evaluate cycles and the validity simulation.
//!
//! Configuration is a flat TOML file whose keys mirror the fields of
//! [`RunConfig`] / [`ValidateConfig`]; unknown keys are rejected. Cycle `c`
//! uses seed `seed + c`, so any single cycle can be reproduced alone.
//!
//! `run` output layout:
//!
//! ```text
//! out/
//!   manifest.json          full configuration, dataset hashes, crate version
//!   errors.jsonl           one record per failed cycle (empty if none)
//!   region_table.csv       per-cycle rows + mean row
//!   rates.csv
//!   sweep_eps.csv          same ε for both classes
//!   sweep_asym.csv         ε_active fixed, ε_inactive varied
//!   pr_curves.csv          decision / eps_inactive / credibility methods
//!   cred_conf_sweep.csv    credibility- and confidence-threshold sweeps
//!   log10_pvalues.csv
//!   cycle_NN/              the same files for one cycle, plus predictions.csv
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conformal::{ConformalError, ConformalPredictor, Epsilons, PValueMode, PValues, PredictionRecord};
use crate::cv::CvScore;
use crate::data::{class_counts, parse_sparse_file, split_indices, Dataset, Label, SplitSpec};
use crate::kernel::{KernelError, KernelSpec};
use crate::metrics::{
    asymmetric_sweep, credibility_confidence_sweep, eps_sweep, rates, region_table, three_method_pr, PrCurve,
    PrGrids, PrPoint, RatesRecord, RegionTable, SweepRow, ThresholdSweep,
};
use crate::ncm::{select_smoothing, train_nb, Distance, KnnNcm, Ncm, NcmError};
use crate::report;
use crate::svm::{
    cross_validate, train_cascade, train_svm, CascadeConfig, Convergence, CvConfig, SvmConfig, SvmError, WeightPolicy,
};
use crate::synth::{synthetic_dataset, SyntheticTask};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
}

impl RunError {
    /// Process exit code: 1 config, 2 data, 3 numeric (I/O counts as data).
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            RunError::Data(_) | RunError::Io { .. } => 2,
            RunError::Numeric(_) => 3,
        }
    }
}

impl From<KernelError> for RunError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::InvalidGamma(_) | KernelError::UnknownKernel(_) | KernelError::MissingGamma { .. } => {
                RunError::Config(e.to_string())
            }
            KernelError::MemoryLimit { .. } => RunError::Numeric(e.to_string()),
            KernelError::Cache(_) | KernelError::CorruptCache(_) => RunError::Data(e.to_string()),
        }
    }
}

impl From<SvmError> for RunError {
    fn from(e: SvmError) -> Self {
        match e {
            SvmError::Kernel(k) => k.into(),
            SvmError::InvalidConfig(_) => RunError::Config(e.to_string()),
            SvmError::Empty | SvmError::SingleClass(_) | SvmError::CrossValidation(_) => RunError::Data(e.to_string()),
            SvmError::NoSupportVectors => RunError::Numeric(e.to_string()),
        }
    }
}

impl From<NcmError> for RunError {
    fn from(e: NcmError) -> Self {
        match e {
            NcmError::InvalidParameter(_) => RunError::Config(e.to_string()),
            NcmError::InsufficientReference { .. } | NcmError::MissingClass(_) => RunError::Data(e.to_string()),
        }
    }
}

impl From<ConformalError> for RunError {
    fn from(e: ConformalError) -> Self {
        match e {
            ConformalError::MissingClass(_) => RunError::Data(e.to_string()),
            ConformalError::NanScore(_) => RunError::Numeric(e.to_string()),
            ConformalError::InvalidEpsilon(_) => RunError::Config(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Underlying {
    #[default]
    Svm,
    Knn,
    Nb,
}

impl std::str::FromStr for Underlying {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "svm" => Ok(Underlying::Svm),
            "knn" => Ok(Underlying::Knn),
            "nb" => Ok(Underlying::Nb),
            other => Err(format!("unknown underlying algorithm {other:?} (expected svm, knn or nb)")),
        }
    }
}

/// Parameters of the underlying algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub underlying: Underlying,
    /// `linear`, `rbf`, `tanimoto` or `tanimoto-rbf`.
    pub kernel: String,
    /// `rbf`: exp(-gamma ||a-b||^2); `tanimoto-rbf`: exp(-|..| / gamma).
    pub gamma: f64,
    pub c: f64,
    /// When non-empty, C is chosen from this grid by stratified CV.
    pub c_grid: Vec<f64>,
    /// `auto` (inverse class frequency) or `w_active:w_inactive`.
    pub class_weights: String,
    pub tolerance: f64,
    pub max_passes: usize,
    /// 0 trains on the whole proper training set at once.
    pub block_size: usize,
    pub max_outer_iterations: usize,
    /// Cascade convergence: `sv-set` or `decision-agreement`.
    pub cascade_convergence: String,
    pub agreement_threshold: f64,
    pub folds: usize,
    pub cv_score: CvScore,
    pub k: usize,
    pub knn_metric: Distance,
    pub nb_smoothing: f64,
    /// When non-empty, the smoothing is chosen from this grid by CV.
    pub nb_smoothing_grid: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            underlying: Underlying::Svm,
            kernel: "tanimoto-rbf".into(),
            gamma: 1.0,
            c: 1.0,
            c_grid: Vec::new(),
            class_weights: "auto".into(),
            tolerance: 1e-3,
            max_passes: 10_000,
            block_size: 0,
            max_outer_iterations: 5,
            cascade_convergence: "sv-set".into(),
            agreement_threshold: 0.99,
            folds: 5,
            cv_score: CvScore::BalancedAccuracy,
            k: 3,
            knn_metric: Distance::Tanimoto,
            nb_smoothing: 1.0,
            nb_smoothing_grid: Vec::new(),
        }
    }
}

impl ModelConfig {
    pub fn kernel_spec(&self) -> Result<KernelSpec, RunError> {
        let gamma = matches!(self.kernel.as_str(), "rbf" | "tanimoto-rbf").then_some(self.gamma);
        Ok(KernelSpec::from_parts(&self.kernel, gamma)?)
    }

    pub fn weight_policy(&self) -> Result<WeightPolicy, RunError> {
        self.class_weights.parse().map_err(RunError::Config)
    }

    fn convergence(&self) -> Result<Convergence, RunError> {
        match self.cascade_convergence.as_str() {
            "sv-set" => Ok(Convergence::SvSet),
            "decision-agreement" => Ok(Convergence::DecisionAgreement {
                threshold: self.agreement_threshold,
                probe_size: 1000,
            }),
            other => Err(RunError::Config(format!(
                "unknown cascade convergence {other:?} (expected sv-set or decision-agreement)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.underlying == Underlying::Svm {
            self.kernel_spec()?;
            self.weight_policy()?;
            self.convergence()?;
        }
        if self.k == 0 {
            return Err(RunError::Config("k must be at least 1".into()));
        }
        Ok(())
    }

    /// Fits the underlying algorithm on the proper training set.
    pub fn build_ncm(&self, proper: &Dataset, seed: u64) -> Result<Ncm, RunError> {
        let cv = CvConfig {
            folds: self.folds,
            seed,
            score: self.cv_score,
        };
        match self.underlying {
            Underlying::Svm => {
                let weights = self.weight_policy()?.resolve(proper);
                let mut cfg = SvmConfig::new(self.c, self.kernel_spec()?);
                cfg.class_weights = weights;
                cfg.tolerance = self.tolerance;
                cfg.max_passes = self.max_passes;
                let model = if self.block_size == 0 || self.block_size >= proper.len() {
                    if !self.c_grid.is_empty() {
                        cfg.c = cross_validate(proper, &cfg, &self.c_grid, &cv)?.best_c;
                    }
                    train_svm(proper, &cfg)?
                } else {
                    let cascade = CascadeConfig {
                        block_size: self.block_size,
                        max_outer_iterations: self.max_outer_iterations,
                        convergence: self.convergence()?,
                        seed,
                        stage_cv: (!self.c_grid.is_empty()).then(|| (self.c_grid.clone(), cv)),
                    };
                    train_cascade(proper, &cfg, &cascade)?.model
                };
                Ok(Ncm::Svm(model))
            }
            Underlying::Knn => {
                let knn = KnnNcm::new(Arc::new(proper.clone()), self.k, self.knn_metric)?;
                Ok(Ncm::Knn(knn))
            }
            Underlying::Nb => {
                let smoothing = if self.nb_smoothing_grid.is_empty() {
                    self.nb_smoothing
                } else {
                    select_smoothing(proper, &self.nb_smoothing_grid, self.folds, seed, self.cv_score)?
                };
                let model = train_nb(proper, smoothing)?;
                Ok(Ncm::NaiveBayes(model))
            }
        }
    }
}

/// Full configuration of a `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Labelled examples; test sets are drawn from here unless `test` is set.
    pub train: PathBuf,
    /// Fixed test set used in every cycle.
    pub test: Option<PathBuf>,
    /// Forces the feature-space dimension (0 = infer).
    pub num_features: usize,
    pub test_size: usize,
    /// 0 = whatever remains after calibration and test.
    pub proper_train_size: usize,
    /// 0 = whatever remains after proper training and test.
    pub calibration_size: usize,
    pub seed: u64,
    pub repetitions: usize,
    #[serde(flatten)]
    pub model: ModelConfig,
    pub eps_active: f64,
    pub eps_inactive: f64,
    pub eps_grid: Vec<f64>,
    pub eps_inactive_grid: Vec<f64>,
    /// Fixed credibility threshold while the confidence threshold varies.
    pub credibility_fixed: f64,
    pub confidence_grid: Vec<f64>,
    /// Fixed confidence threshold while the credibility threshold varies.
    pub confidence_fixed: f64,
    pub credibility_grid: Vec<f64>,
    pub decision_grid: Vec<f64>,
    pub smoothed: bool,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: PathBuf::new(),
            test: None,
            num_features: 0,
            test_size: 10_000,
            proper_train_size: 100_000,
            calibration_size: 0,
            seed: 0,
            repetitions: 20,
            model: ModelConfig::default(),
            eps_active: 0.01,
            eps_inactive: 0.01,
            eps_grid: vec![0.01, 0.05, 0.10, 0.15, 0.20],
            eps_inactive_grid: vec![0.0, 0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 1.0],
            credibility_fixed: 0.0,
            confidence_grid: vec![0.0, 0.5, 0.8, 0.9, 0.95, 0.99],
            confidence_fixed: 0.0,
            credibility_grid: vec![0.0, 0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9],
            decision_grid: vec![f64::NEG_INFINITY, -1.0, -0.5, 0.0, 0.5, 1.0],
            smoothed: false,
            output_dir: PathBuf::from("icp-run"),
        }
    }
}

/// Keys a config file may contain: those of the serialized default plus
/// optional fields that serialize to nothing.
fn known_keys<T: Serialize + Default>(extra: &[&str]) -> BTreeSet<String> {
    let table = toml::Table::try_from(T::default()).expect("config serializes to a table");
    table.keys().cloned().chain(extra.iter().map(|s| s.to_string())).collect()
}

fn parse_flat_toml<T>(text: &str, extra: &[&str]) -> Result<T, RunError>
where
    T: Serialize + Default + for<'de> Deserialize<'de>,
{
    let table: toml::Table = text.parse().map_err(|e| RunError::Config(format!("{e}")))?;
    let known = known_keys::<T>(extra);
    if let Some(k) = table.keys().find(|k| !known.contains(*k)) {
        return Err(RunError::Config(format!("unknown configuration key {k:?}")));
    }
    if let Some((k, _)) = table.iter().find(|(_, v)| v.is_table()) {
        return Err(RunError::Config(format!("key {k:?}: nested tables are not allowed")));
    }
    table.try_into().map_err(|e| RunError::Config(format!("{e}")))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        parse_flat_toml(text, &["test"])
    }

    pub fn from_file(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Split sizes for a dataset of `total` examples.
    pub fn split_spec(&self, total: usize, test_size: usize, seed: u64) -> Result<SplitSpec, RunError> {
        let infeasible = |e: crate::data::DataError| RunError::Config(e.to_string());
        match (self.proper_train_size, self.calibration_size) {
            (proper, 0) => SplitSpec::with_remainder(total, proper, test_size, seed).map_err(infeasible),
            (0, cal) => {
                let spec = SplitSpec::with_remainder(total, cal, test_size, seed).map_err(infeasible)?;
                Ok(SplitSpec {
                    proper_train_size: spec.calibration_size,
                    calibration_size: cal,
                    ..spec
                })
            }
            (proper, cal) => Ok(SplitSpec {
                proper_train_size: proper,
                calibration_size: cal,
                test_size,
                seed,
            }),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn epsilons(&self) -> Result<Epsilons, RunError> {
        Ok(Epsilons::new(self.eps_active, self.eps_inactive)?)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.repetitions == 0 {
            return Err(RunError::Config("repetitions must be at least 1".into()));
        }
        if self.proper_train_size == 0 && self.calibration_size == 0 {
            return Err(RunError::Config(
                "at most one of proper_train_size and calibration_size may be 0 (remainder)".into(),
            ));
        }
        if self.eps_grid.is_empty() {
            return Err(RunError::Config("eps_grid must not be empty".into()));
        }
        for path in std::iter::once(&self.train).chain(self.test.as_ref()) {
            if !path.is_file() {
                return Err(RunError::Config(format!("input file {} does not exist", path.display())));
            }
        }
        self.epsilons()?;
        for &e in self.eps_grid.iter().chain(&self.eps_inactive_grid) {
            if !(0.0..=1.0).contains(&e) {
                return Err(RunError::Config(format!("significance level {e} outside [0, 1]")));
            }
        }
        self.model.validate()
    }
}

/// Everything computed in one cycle.
#[derive(Debug, Clone)]
pub struct CycleOutput {
    pub cycle: usize,
    pub seed: u64,
    pub ncm: String,
    pub calibration_counts: (usize, usize),
    pub test: Dataset,
    pub p_values: Vec<PValues>,
    pub records: Vec<PredictionRecord>,
    pub decision_values: Option<Vec<f64>>,
    pub table: RegionTable,
    pub rates: RatesRecord,
    pub eps_sweep: Vec<SweepRow>,
    pub asym_sweep: Vec<SweepRow>,
    pub cred_conf: Vec<(ThresholdSweep, Vec<PrPoint>)>,
    pub pr_curves: Vec<PrCurve>,
}

/// Machine-readable record of a failed cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleError {
    pub cycle: usize,
    pub stage: String,
    pub kind: String,
    pub message: String,
}

impl CycleError {
    fn new(cycle: usize, stage: &str, e: RunError) -> Self {
        let kind = match e {
            RunError::Config(_) => "config",
            RunError::Data(_) | RunError::Io { .. } => "data",
            RunError::Numeric(_) => "numeric",
        };
        Self {
            cycle,
            stage: stage.into(),
            kind: kind.into(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug)]
pub struct RunSummary {
    pub cycles: Vec<CycleOutput>,
    pub errors: Vec<CycleError>,
    pub output_dir: PathBuf,
}

/// Loads a dataset, attaching positional ids when the file has none.
pub fn load_dataset(path: &Path) -> Result<Dataset, RunError> {
    let ds = parse_sparse_file(path).map_err(|e| RunError::Data(format!("{}: {e}", path.display())))?;
    if ds.ids().is_some() {
        return Ok(ds);
    }
    let ids = (0..ds.len()).map(|i| i.to_string()).collect();
    ds.with_ids(ids).map_err(|e| RunError::Data(e.to_string()))
}

fn align_features(sets: &mut [&mut Dataset], forced: usize) -> Result<(), RunError> {
    let widest = sets.iter().map(|d| d.num_features()).max().unwrap_or(0);
    let n = if forced > 0 { forced } else { widest };
    for d in sets.iter_mut() {
        d.set_num_features(n).map_err(|e| RunError::Data(e.to_string()))?;
    }
    Ok(())
}

/// Shared by `run` and `validate`: split, fit, calibrate and predict.
fn fit_and_predict(
    model: &ModelConfig,
    proper: &Dataset,
    calibration: &Dataset,
    test: &Dataset,
    mode: PValueMode,
    seed: u64,
    cycle: usize,
) -> Result<(Ncm, ConformalPredictor, Vec<PValues>), CycleError> {
    let ncm = model
        .build_ncm(proper, seed)
        .map_err(|e| CycleError::new(cycle, "train", e))?;
    let predictor = ConformalPredictor::calibrate(ncm.clone(), calibration)
        .map_err(|e| CycleError::new(cycle, "calibrate", e.into()))?
        .with_mode(mode);
    let p_values = predictor.p_values_batch(test.vectors());
    Ok((ncm, predictor, p_values))
}

fn run_cycle(cfg: &RunConfig, data: &Dataset, fixed_test: Option<&Dataset>, cycle: usize) -> Result<CycleOutput, CycleError> {
    let seed = cfg.seed.wrapping_add(cycle as u64);
    let fail = |stage: &str, e: RunError| CycleError::new(cycle, stage, e);
    let test_size = if fixed_test.is_some() { 0 } else { cfg.test_size };
    let spec = cfg.split_spec(data.len(), test_size, seed).map_err(|e| fail("split", e))?;
    let idx = split_indices(data.len(), &spec).map_err(|e| fail("split", RunError::Config(e.to_string())))?;
    let proper = data.subset(&idx.proper_train);
    let calibration = data.subset(&idx.calibration);
    let test = match fixed_test {
        Some(t) => t.clone(),
        None => data.subset(&idx.test),
    };

    let mode = if cfg.smoothed {
        PValueMode::Smoothed { seed }
    } else {
        PValueMode::Deterministic
    };
    let (ncm, predictor, p_values) = fit_and_predict(&cfg.model, &proper, &calibration, &test, mode, seed, cycle)?;
    let eps = cfg.epsilons().map_err(|e| fail("predict", e))?;
    let records: Vec<PredictionRecord> = p_values
        .iter()
        .map(|&p| PredictionRecord::from_p_values(p, &eps))
        .collect();
    let decision_values: Option<Vec<f64>> = match &ncm {
        Ncm::Svm(_) => Some(test.vectors().par_iter().map(|x| ncm.decision_value(x).unwrap_or(0.0)).collect()),
        _ => None,
    };

    let truth = test.labels();
    let metric = |e: crate::metrics::MetricsError| fail("evaluate", RunError::Numeric(e.to_string()));
    let table = region_table(&records, truth).map_err(metric)?;
    let (na, ni) = class_counts(&test);
    let cycle_rates = rates(&table, na as f64, ni as f64);
    let eps_rows = eps_sweep(&p_values, truth, &cfg.eps_grid).map_err(metric)?;
    let asym_rows = asymmetric_sweep(&p_values, truth, cfg.eps_active, &cfg.eps_inactive_grid).map_err(metric)?;
    let mut cred_conf = Vec::new();
    for sweep in [
        ThresholdSweep::VaryConfidence {
            credibility: cfg.credibility_fixed,
        },
        ThresholdSweep::VaryCredibility {
            confidence: cfg.confidence_fixed,
        },
    ] {
        let grid = match sweep {
            ThresholdSweep::VaryConfidence { .. } => &cfg.confidence_grid,
            ThresholdSweep::VaryCredibility { .. } => &cfg.credibility_grid,
        };
        cred_conf.push((sweep, credibility_confidence_sweep(&records, truth, sweep, grid).map_err(metric)?));
    }
    let grids = PrGrids {
        decision_thresholds: cfg.decision_grid.clone(),
        eps_active: cfg.eps_active,
        eps_inactive: cfg.eps_inactive_grid.clone(),
        credibility: cfg.credibility_grid.clone(),
    };
    let pr_curves = three_method_pr(&records, decision_values.as_deref(), truth, &grids).map_err(metric)?;

    let cal = predictor.calibration();
    Ok(CycleOutput {
        cycle,
        seed,
        ncm: ncm.describe(),
        calibration_counts: (cal.count(Label::Active), cal.count(Label::Inactive)),
        test,
        p_values,
        records,
        decision_values,
        table,
        rates: cycle_rates,
        eps_sweep: eps_rows,
        asym_sweep: asym_rows,
        cred_conf,
        pr_curves,
    })
}

fn write_outputs(dir: &Path, cycles: &[&CycleOutput]) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let tables: Vec<(usize, RegionTable)> = cycles.iter().map(|c| (c.cycle, c.table)).collect();
    write_file(&dir.join("region_table.csv"), &report::region_table_csv(&tables))?;
    let rates_rows: Vec<_> = cycles.iter().map(|c| (c.cycle, c.table, c.rates)).collect();
    write_file(&dir.join("rates.csv"), &report::rates_csv(&rates_rows))?;
    let eps: Vec<_> = cycles.iter().map(|c| (c.cycle, c.eps_sweep.clone())).collect();
    write_file(&dir.join("sweep_eps.csv"), &report::sweep_csv(&eps))?;
    let asym: Vec<_> = cycles.iter().map(|c| (c.cycle, c.asym_sweep.clone())).collect();
    write_file(&dir.join("sweep_asym.csv"), &report::sweep_csv(&asym))?;
    let pr: Vec<_> = cycles.iter().map(|c| (c.cycle, c.pr_curves.clone())).collect();
    write_file(&dir.join("pr_curves.csv"), &report::pr_curves_csv(&pr))?;
    let cc: Vec<_> = cycles.iter().map(|c| (c.cycle, c.cred_conf.clone())).collect();
    write_file(&dir.join("cred_conf_sweep.csv"), &report::cred_conf_csv(&cc))?;

    if let [single] = cycles {
        write_file(
            &dir.join("log10_pvalues.csv"),
            &report::log10_pvalues_csv(&single.records, single.test.labels()),
        )?;
        write_file(
            &dir.join("predictions.csv"),
            &report::predictions_csv(&single.records, &single.test),
        )?;
    } else {
        let mut out = String::from("cycle,log10_p_active,log10_p_inactive,true_label\n");
        for c in cycles {
            for line in report::log10_pvalues_csv(&c.records, c.test.labels()).lines().skip(1) {
                out.push_str(&format!("{},{line}\n", c.cycle));
            }
        }
        write_file(&dir.join("log10_pvalues.csv"), &out)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    train_sha256: String,
    test_sha256: Option<String>,
    num_examples: usize,
    num_features: usize,
    cycles: Vec<ManifestCycle>,
    failed_cycles: Vec<usize>,
}

#[derive(Serialize)]
struct ManifestCycle {
    cycle: usize,
    seed: u64,
    ncm: String,
    calibration_active: usize,
    calibration_inactive: usize,
    test_size: usize,
}

/// Runs `repetitions` independent cycles and writes all reports.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunSummary, RunError> {
    cfg.validate()?;
    let mut data = load_dataset(&cfg.train)?;
    let mut test = cfg.test.as_deref().map(load_dataset).transpose()?;
    match test.as_mut() {
        Some(t) => align_features(&mut [&mut data, t], cfg.num_features)?,
        None => align_features(&mut [&mut data], cfg.num_features)?,
    }
    let test_size = if test.is_some() { 0 } else { cfg.test_size };
    let spec = cfg.split_spec(data.len(), test_size, cfg.seed)?;
    split_indices(data.len(), &spec).map_err(|e| RunError::Config(e.to_string()))?;
    info!(
        "loaded {} examples ({} features), running {} cycles",
        data.len(),
        data.num_features(),
        cfg.repetitions
    );

    let results: Vec<Result<CycleOutput, CycleError>> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|c| run_cycle(cfg, &data, test.as_ref(), c))
        .collect();
    let mut cycles = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(c) => cycles.push(c),
            Err(e) => {
                log::error!("cycle {} failed in {}: {}", e.cycle, e.stage, e.message);
                errors.push(e);
            }
        }
    }

    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    cycles
        .par_iter()
        .map(|c| write_outputs(&out.join(format!("cycle_{:02}", c.cycle)), &[c]))
        .collect::<Result<Vec<()>, RunError>>()?;
    let refs: Vec<&CycleOutput> = cycles.iter().collect();
    write_outputs(out, &refs)?;

    let mut jsonl = String::new();
    for e in &errors {
        jsonl.push_str(&serde_json::to_string(e).expect("error record serializes"));
        jsonl.push('\n');
    }
    write_file(&out.join("errors.jsonl"), &jsonl)?;

    let manifest = Manifest {
        tool: "icp",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        train_sha256: data.content_hash(),
        test_sha256: test.as_ref().map(Dataset::content_hash),
        num_examples: data.len(),
        num_features: data.num_features(),
        cycles: cycles
            .iter()
            .map(|c| ManifestCycle {
                cycle: c.cycle,
                seed: c.seed,
                ncm: c.ncm.clone(),
                calibration_active: c.calibration_counts.0,
                calibration_inactive: c.calibration_counts.1,
                test_size: c.test.len(),
            })
            .collect(),
        failed_cycles: errors.iter().map(|e| e.cycle).collect(),
    };
    write_file(
        &out.join("manifest.json"),
        &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"),
    )?;

    if cycles.is_empty() {
        let first = &errors[0];
        let msg = format!("all cycles failed; first failure in {}: {}", first.stage, first.message);
        return Err(match first.kind.as_str() {
            "config" => RunError::Config(msg),
            "data" => RunError::Data(msg),
            _ => RunError::Numeric(msg),
        });
    }
    Ok(RunSummary {
        cycles,
        errors,
        output_dir: out.clone(),
    })
}

/// How the validity simulation perturbs the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidityScenario {
    #[default]
    Exchangeable,
    /// Labels permuted over the whole dataset before splitting; still
    /// exchangeable, so validity must hold.
    ShuffledLabels,
    /// Test examples drawn from differently seeded class profiles; not
    /// exchangeable, exceedances are reported but expected.
    Drift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidateConfig {
    /// Dataset to resample; when absent a synthetic task is generated.
    pub data: Option<PathBuf>,
    pub num_examples: usize,
    pub active_fraction: f64,
    pub num_features: usize,
    pub mean_nnz: f64,
    pub separation: f64,
    pub test_size: usize,
    pub proper_train_size: usize,
    pub cycles: usize,
    pub seed: u64,
    pub eps_grid: Vec<f64>,
    pub smoothed: bool,
    pub scenario: ValidityScenario,
    #[serde(flatten)]
    pub model: ModelConfig,
    pub output_dir: Option<PathBuf>,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            data: None,
            num_examples: 2000,
            active_fraction: 0.05,
            num_features: 200,
            mean_nnz: 20.0,
            separation: 1.0,
            test_size: 600,
            proper_train_size: 800,
            cycles: 20,
            seed: 0,
            eps_grid: vec![0.01, 0.05, 0.10, 0.15, 0.20],
            smoothed: false,
            scenario: ValidityScenario::Exchangeable,
            model: ModelConfig::default(),
            output_dir: None,
        }
    }
}

impl ValidateConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        parse_flat_toml(text, &["data", "output_dir"])
    }

    pub fn from_file(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn task(&self) -> SyntheticTask {
        SyntheticTask {
            num_features: self.num_features,
            mean_nnz: self.mean_nnz,
            separation: self.separation,
            profile_seed: self.seed.wrapping_add(1),
        }
    }
}

/// Error-rate check for one (class, ε) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityCell {
    pub label: Label,
    pub eps: f64,
    /// Mean over cycles of the fraction of class test examples with
    /// `p_true <= eps`.
    pub mean_error_rate: f64,
    /// Mean number of class test examples per cycle.
    pub n_class_test: f64,
    /// `3 * sqrt(eps (1 - eps) / n_class_test)`.
    pub tolerance: f64,
    /// Passes the one-sided bound `mean <= eps + tolerance`.
    pub within_upper: bool,
    /// Also within `eps - tolerance` (the two-sided check for smoothed p-values).
    pub within_two_sided: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub smoothed: bool,
    pub scenario: ValidityScenario,
    pub cycles: usize,
    pub cells: Vec<ValidityCell>,
    pub failed_cycles: Vec<CycleError>,
}

impl ValidityReport {
    pub fn all_pass(&self) -> bool {
        self.failed_cycles.is_empty() && self.cells.iter().all(|c| c.pass)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,eps,mean_error_rate,n_class_test,tolerance,within_upper,within_two_sided,pass\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                c.label, c.eps, c.mean_error_rate, c.n_class_test, c.tolerance, c.within_upper, c.within_two_sided, c.pass
            ));
        }
        out
    }
}

/// Mondrian validity simulation: for each class and ε, the mean frequency
/// with which the true label's p-value is at most ε.
pub fn run_validation(cfg: &ValidateConfig) -> Result<ValidityReport, RunError> {
    cfg.model.validate()?;
    if cfg.cycles == 0 || cfg.eps_grid.is_empty() {
        return Err(RunError::Config("cycles and eps_grid must be non-empty".into()));
    }
    let task = cfg.task();
    let base = match &cfg.data {
        Some(path) => load_dataset(path)?,
        None => synthetic_dataset(&task, cfg.num_examples, cfg.active_fraction, cfg.seed),
    };
    let spec0 = SplitSpec::with_remainder(base.len(), cfg.proper_train_size, cfg.test_size, cfg.seed)
        .map_err(|e| RunError::Config(e.to_string()))?;
    let mode_for = |seed| {
        if cfg.smoothed {
            PValueMode::Smoothed { seed }
        } else {
            PValueMode::Deterministic
        }
    };

    let results: Vec<Result<(Vec<PValues>, Vec<Label>), CycleError>> = (0..cfg.cycles)
        .into_par_iter()
        .map(|cycle| {
            let seed = cfg.seed.wrapping_add(cycle as u64);
            let data = match cfg.scenario {
                ValidityScenario::ShuffledLabels => {
                    use rand::seq::SliceRandom;
                    use rand::SeedableRng;
                    let mut labels = base.labels().to_vec();
                    labels.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
                    base.with_labels(labels).expect("same length")
                }
                _ => base.clone(),
            };
            let spec = SplitSpec { seed, ..spec0 };
            let idx = split_indices(data.len(), &spec)
                .map_err(|e| CycleError::new(cycle, "split", RunError::Config(e.to_string())))?;
            let proper = data.subset(&idx.proper_train);
            let calibration = data.subset(&idx.calibration);
            let test = match cfg.scenario {
                ValidityScenario::Drift => {
                    let drifted = task.drifted(task.profile_seed.wrapping_add(1000));
                    let n_active = class_counts(&data.subset(&idx.test)).0;
                    drifted.generate(idx.test.len(), n_active, seed.wrapping_add(77))
                }
                _ => data.subset(&idx.test),
            };
            for (name, set) in [("calibration", &calibration), ("test", &test)] {
                let (a, i) = class_counts(set);
                if a == 0 || i == 0 {
                    return Err(CycleError::new(
                        cycle,
                        "split",
                        RunError::Data(format!("{name} set lacks a class ({a} active, {i} inactive)")),
                    ));
                }
            }
            let (_, _, p) = fit_and_predict(&cfg.model, &proper, &calibration, &test, mode_for(seed), seed, cycle)?;
            Ok((p, test.labels().to_vec()))
        })
        .collect();

    let mut runs = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(v) => runs.push(v),
            Err(e) => failed.push(e),
        }
    }
    if runs.is_empty() {
        return Err(RunError::Data("no validation cycle succeeded".into()));
    }

    let mut cells = Vec::new();
    for label in Label::BOTH {
        for &eps in &cfg.eps_grid {
            let mut rate_sum = 0.0;
            let mut count_sum = 0.0;
            for (p, truth) in &runs {
                let mut n = 0usize;
                let mut errors = 0usize;
                for (pv, &t) in p.iter().zip(truth) {
                    if t == label {
                        n += 1;
                        let p_true = if label == Label::Active { pv.active } else { pv.inactive };
                        if p_true <= eps {
                            errors += 1;
                        }
                    }
                }
                rate_sum += errors as f64 / n as f64;
                count_sum += n as f64;
            }
            let k = runs.len() as f64;
            let mean = rate_sum / k;
            let n_class = count_sum / k;
            let tolerance = 3.0 * (eps * (1.0 - eps) / n_class).sqrt();
            let within_upper = mean <= eps + tolerance;
            let within_two_sided = within_upper && mean >= eps - tolerance;
            let pass = if cfg.smoothed { within_two_sided } else { within_upper };
            cells.push(ValidityCell {
                label,
                eps,
                mean_error_rate: mean,
                n_class_test: n_class,
                tolerance,
                within_upper,
                within_two_sided,
                pass,
            });
        }
    }
    let report = ValidityReport {
        smoothed: cfg.smoothed,
        scenario: cfg.scenario,
        cycles: runs.len(),
        cells,
        failed_cycles: failed,
    };
    if let Some(dir) = &cfg.output_dir {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_file(&dir.join("validity.csv"), &report.to_csv())?;
    }
    Ok(report)
}
