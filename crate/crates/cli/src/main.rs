//! `icp`: inductive Mondrian conformal prediction from the command line.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use icp_core::conformal::{read_calibration, write_calibration};
use icp_core::cv::CvScore;
use icp_core::metrics::{asymmetric_sweep, credibility_confidence_sweep, eps_sweep, three_method_pr, PrGrids, ThresholdSweep};
use icp_core::ncm::Distance;
use icp_core::report;
use icp_core::runner::{load_dataset, Underlying, ValidityScenario};
use icp_core::svm::{read_model, write_model};
use icp_core::{
    calibrate, class_counts, run_experiment, run_validation, ConformalPredictor, Dataset, Epsilons, Label,
    ModelConfig, Ncm, PValueMode, PredictionRecord, RunConfig, RunError, ValidateConfig,
};

#[derive(Parser)]
#[command(name = "icp", version, about = "Inductive Mondrian conformal prediction for sparse binary data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Repeated split / train / calibrate / evaluate cycles with full reports.
    Run(RunArgs),
    /// Mondrian validity simulation on synthetic or supplied data.
    Validate(ValidateArgs),
    /// Train an SVM and write it to a model file.
    TrainSvm(TrainArgs),
    /// Score a calibration set and write the per-class scores.
    Calibrate(CalibrateArgs),
    /// Region and forced predictions for a test set.
    Predict(PredictArgs),
    /// ε, asymmetric, credibility/confidence and precision/recall sweeps.
    Sweep(SweepArgs),
    /// Summarize a model file and, optionally, a calibration file.
    Inspect(InspectArgs),
}

#[derive(Args, Default)]
struct ModelArgs {
    /// svm, knn or nb.
    #[arg(long)]
    underlying: Option<Underlying>,
    /// linear, rbf, tanimoto or tanimoto-rbf.
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    /// Comma-separated C values chosen by stratified cross-validation.
    #[arg(long, value_delimiter = ',')]
    c_grid: Option<Vec<f64>>,
    /// `auto` or `w_active:w_inactive`.
    #[arg(long)]
    class_weights: Option<String>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Cascade block size; 0 trains on the whole set at once.
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    max_outer_iterations: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    /// balanced-accuracy or accuracy.
    #[arg(long)]
    cv_score: Option<CvScore>,
    #[arg(long)]
    k: Option<usize>,
    /// tanimoto or euclidean.
    #[arg(long)]
    knn_metric: Option<Distance>,
    #[arg(long)]
    nb_smoothing: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    nb_smoothing_grid: Option<Vec<f64>>,
}

impl ModelArgs {
    fn apply(&self, m: &mut ModelConfig) {
        if let Some(v) = self.underlying {
            m.underlying = v;
        }
        if let Some(v) = &self.kernel {
            m.kernel = v.clone();
        }
        if let Some(v) = self.gamma {
            m.gamma = v;
        }
        if let Some(v) = self.c {
            m.c = v;
        }
        if let Some(v) = &self.c_grid {
            m.c_grid = v.clone();
        }
        if let Some(v) = &self.class_weights {
            m.class_weights = v.clone();
        }
        if let Some(v) = self.tolerance {
            m.tolerance = v;
        }
        if let Some(v) = self.block_size {
            m.block_size = v;
        }
        if let Some(v) = self.max_outer_iterations {
            m.max_outer_iterations = v;
        }
        if let Some(v) = self.folds {
            m.folds = v;
        }
        if let Some(v) = self.cv_score {
            m.cv_score = v;
        }
        if let Some(v) = self.k {
            m.k = v;
        }
        if let Some(v) = self.knn_metric {
            m.knn_metric = v;
        }
        if let Some(v) = self.nb_smoothing {
            m.nb_smoothing = v;
        }
        if let Some(v) = &self.nb_smoothing_grid {
            m.nb_smoothing_grid = v.clone();
        }
    }
}

#[derive(Args)]
struct EpsArgs {
    /// Significance level for both classes.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    eps_active: Option<f64>,
    #[arg(long)]
    eps_inactive: Option<f64>,
}

impl EpsArgs {
    fn resolve(&self, default_active: f64, default_inactive: f64) -> (f64, f64) {
        let active = self.eps_active.or(self.eps).unwrap_or(default_active);
        let inactive = self.eps_inactive.or(self.eps).unwrap_or(default_inactive);
        (active, inactive)
    }
}

#[derive(Args)]
struct RunArgs {
    /// Flat TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    num_features: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    proper_train_size: Option<usize>,
    #[arg(long)]
    calibration_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[command(flatten)]
    eps: EpsArgs,
    #[arg(long, value_delimiter = ',')]
    eps_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    eps_inactive_grid: Option<Vec<f64>>,
    #[arg(long)]
    smoothed: bool,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset to resample instead of a synthetic task.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    num_examples: Option<usize>,
    #[arg(long)]
    active_fraction: Option<f64>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    proper_train_size: Option<usize>,
    #[arg(long)]
    cycles: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    eps_grid: Option<Vec<f64>>,
    #[arg(long)]
    smoothed: bool,
    /// exchangeable, shuffled-labels or drift.
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<ValidityScenario>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
}

fn parse_scenario(s: &str) -> Result<ValidityScenario, String> {
    match s {
        "exchangeable" => Ok(ValidityScenario::Exchangeable),
        "shuffled-labels" => Ok(ValidityScenario::ShuffledLabels),
        "drift" => Ok(ValidityScenario::Drift),
        other => Err(format!("unknown scenario {other:?}")),
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    model: ModelArgs,
}

/// Where the nonconformity measure comes from: a saved SVM model, or an
/// underlying algorithm fitted on `--train`.
#[derive(Args)]
struct NcmSource {
    #[arg(long, conflicts_with = "train")]
    model: Option<PathBuf>,
    /// Proper training set for fitting the underlying algorithm.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    params: ModelArgs,
}

impl NcmSource {
    fn load(&self) -> Result<Ncm, RunError> {
        match (&self.model, &self.train) {
            (Some(path), _) => Ok(Ncm::Svm(load_model(path)?)),
            (None, Some(train)) => {
                let mut cfg = ModelConfig::default();
                self.params.apply(&mut cfg);
                cfg.validate()?;
                cfg.build_ncm(&load_dataset(train)?, self.seed)
            }
            (None, None) => Err(RunError::Config("either --model or --train is required".into())),
        }
    }
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    source: NcmSource,
    /// Labelled calibration set.
    #[arg(long)]
    calibration: PathBuf,
    /// Calibration scores file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    source: NcmSource,
    /// Calibration scores written by `calibrate`.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    eps: EpsArgs,
    #[arg(long)]
    smoothed: bool,
    /// Predictions CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    source: NcmSource,
    #[arg(long)]
    scores: PathBuf,
    /// Labelled test set.
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    eps: EpsArgs,
    #[arg(long)]
    smoothed: bool,
    #[arg(long, value_delimiter = ',')]
    eps_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    eps_inactive_grid: Option<Vec<f64>>,
    #[arg(long)]
    credibility_fixed: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    confidence_grid: Option<Vec<f64>>,
    #[arg(long)]
    confidence_fixed: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    credibility_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    decision_grid: Option<Vec<f64>>,
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Calibration scores file.
    #[arg(long)]
    scores: Option<PathBuf>,
}

fn load_model(path: &Path) -> Result<icp_core::SvmModel, RunError> {
    read_model(path).map_err(|e| RunError::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), RunError> {
    std::fs::write(path, contents).map_err(|e| RunError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn epsilons(active: f64, inactive: f64) -> Result<Epsilons, RunError> {
    Ok(Epsilons::new(active, inactive)?)
}

fn cmd_run(args: RunArgs) -> Result<(), RunError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = args.train {
        cfg.train = v;
    }
    if args.test.is_some() {
        cfg.test = args.test;
    }
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { cfg.$field = v; })* };
    }
    set!(num_features, test_size, proper_train_size, calibration_size, seed, repetitions, eps_grid, eps_inactive_grid, output_dir);
    (cfg.eps_active, cfg.eps_inactive) = args.eps.resolve(cfg.eps_active, cfg.eps_inactive);
    cfg.smoothed |= args.smoothed;
    args.model.apply(&mut cfg.model);

    let summary = run_experiment(&cfg)?;
    for e in &summary.errors {
        eprintln!("cycle {} failed in {}: {}", e.cycle, e.stage, e.message);
    }
    println!(
        "{} of {} cycles completed; reports in {}",
        summary.cycles.len(),
        cfg.repetitions,
        summary.output_dir.display()
    );
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<(), RunError> {
    let mut cfg = match &args.config {
        Some(path) => ValidateConfig::from_file(path)?,
        None => ValidateConfig::default(),
    };
    if args.data.is_some() {
        cfg.data = args.data;
    }
    if args.output_dir.is_some() {
        cfg.output_dir = args.output_dir;
    }
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { cfg.$field = v; })* };
    }
    set!(num_examples, active_fraction, test_size, proper_train_size, cycles, seed, eps_grid, scenario);
    cfg.smoothed |= args.smoothed;
    args.model.apply(&mut cfg.model);

    let report = run_validation(&cfg)?;
    println!("label,eps,mean_error_rate,bound,result");
    for c in &report.cells {
        let bound = if report.smoothed {
            format!("[{:.4}, {:.4}]", c.eps - c.tolerance, c.eps + c.tolerance)
        } else {
            format!("<= {:.4}", c.eps + c.tolerance)
        };
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        println!("{},{},{:.4},{bound},{verdict}", c.label, c.eps, c.mean_error_rate);
    }
    for e in &report.failed_cycles {
        eprintln!("cycle {} failed in {}: {}", e.cycle, e.stage, e.message);
    }
    let overall = if report.all_pass() { "PASS" } else { "FAIL" };
    if cfg.scenario == ValidityScenario::Drift {
        println!("overall: {overall} (drift scenario: exceedances are expected)");
    } else {
        println!("overall: {overall}");
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), RunError> {
    let mut cfg = ModelConfig::default();
    args.model.apply(&mut cfg);
    if cfg.underlying != Underlying::Svm {
        return Err(RunError::Config("train-svm trains SVMs only; omit --underlying or set it to svm".into()));
    }
    cfg.validate()?;
    let train = load_dataset(&args.train)?;
    let Ncm::Svm(model) = cfg.build_ncm(&train, args.seed)? else {
        unreachable!("svm underlying builds an svm measure")
    };
    write_model(&args.out, &model).map_err(|e| RunError::Io {
        path: args.out.display().to_string(),
        message: e.to_string(),
    })?;
    println!(
        "trained on {} examples: {} support vectors, C = {}, converged = {}",
        train.len(),
        model.num_support_vectors(),
        model.c,
        model.converged
    );
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<(), RunError> {
    let ncm = args.source.load()?;
    let cal_set = load_dataset(&args.calibration)?;
    let scores = calibrate(&ncm, &cal_set)?;
    write_calibration(&args.out, &scores, &ncm.describe()).map_err(|e| RunError::Io {
        path: args.out.display().to_string(),
        message: e.to_string(),
    })?;
    println!(
        "calibrated {}: {} active, {} inactive scores",
        ncm.name(),
        scores.count(Label::Active),
        scores.count(Label::Inactive)
    );
    Ok(())
}

fn load_predictor(source: &NcmSource, scores: &Path, smoothed: bool) -> Result<ConformalPredictor, RunError> {
    let ncm = source.load()?;
    let (cal, recorded) = read_calibration(scores).map_err(|e| RunError::Data(format!("{}: {e}", scores.display())))?;
    if recorded != ncm.describe() {
        return Err(RunError::Config(format!(
            "calibration scores were produced by `{recorded}`, not `{}`",
            ncm.describe()
        )));
    }
    let mode = if smoothed {
        PValueMode::Smoothed { seed: source.seed }
    } else {
        PValueMode::Deterministic
    };
    Ok(ConformalPredictor::new(ncm, cal).with_mode(mode))
}

fn cmd_predict(args: PredictArgs) -> Result<(), RunError> {
    let predictor = load_predictor(&args.source, &args.scores, args.smoothed)?;
    let test = load_dataset(&args.test)?;
    let (ea, ei) = args.eps.resolve(0.01, 0.01);
    let records = predictor.predict_batch(test.vectors(), &epsilons(ea, ei)?);
    let csv = report::predictions_csv(&records, &test);
    match &args.out {
        Some(path) => write(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<(), RunError> {
    let defaults = RunConfig::default();
    let predictor = load_predictor(&args.source, &args.scores, args.smoothed)?;
    let test: Dataset = load_dataset(&args.test)?;
    let (ea, ei) = args.eps.resolve(defaults.eps_active, defaults.eps_inactive);
    let eps = epsilons(ea, ei)?;
    let p_values = predictor.p_values_batch(test.vectors());
    let records: Vec<PredictionRecord> = p_values.iter().map(|&p| PredictionRecord::from_p_values(p, &eps)).collect();
    let decision: Option<Vec<f64>> = match predictor.ncm() {
        ncm @ Ncm::Svm(_) => Some(test.vectors().iter().map(|x| ncm.decision_value(x).unwrap_or(0.0)).collect()),
        _ => None,
    };
    let truth = test.labels();
    let numeric = |e: icp_core::metrics::MetricsError| RunError::Numeric(e.to_string());

    let eps_grid = args.eps_grid.unwrap_or(defaults.eps_grid);
    let inactive_grid = args.eps_inactive_grid.unwrap_or(defaults.eps_inactive_grid);
    let conf_grid = args.confidence_grid.unwrap_or(defaults.confidence_grid);
    let cred_grid = args.credibility_grid.unwrap_or(defaults.credibility_grid);
    let sweeps = [
        (
            ThresholdSweep::VaryConfidence {
                credibility: args.credibility_fixed.unwrap_or(defaults.credibility_fixed),
            },
            &conf_grid,
        ),
        (
            ThresholdSweep::VaryCredibility {
                confidence: args.confidence_fixed.unwrap_or(defaults.confidence_fixed),
            },
            &cred_grid,
        ),
    ];
    let mut cred_conf = Vec::new();
    for (sweep, grid) in sweeps {
        cred_conf.push((sweep, credibility_confidence_sweep(&records, truth, sweep, grid).map_err(numeric)?));
    }
    let grids = PrGrids {
        decision_thresholds: args.decision_grid.unwrap_or(defaults.decision_grid),
        eps_active: ea,
        eps_inactive: inactive_grid.clone(),
        credibility: cred_grid.clone(),
    };

    let dir = &args.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| RunError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    let sym = eps_sweep(&p_values, truth, &eps_grid).map_err(numeric)?;
    write(&dir.join("sweep_eps.csv"), &report::sweep_csv(&[(0, sym)]))?;
    let asym = asymmetric_sweep(&p_values, truth, ea, &inactive_grid).map_err(numeric)?;
    write(&dir.join("sweep_asym.csv"), &report::sweep_csv(&[(0, asym)]))?;
    write(&dir.join("cred_conf_sweep.csv"), &report::cred_conf_csv(&[(0, cred_conf)]))?;
    let pr = three_method_pr(&records, decision.as_deref(), truth, &grids).map_err(numeric)?;
    write(&dir.join("pr_curves.csv"), &report::pr_curves_csv(&[(0, pr)]))?;
    write(&dir.join("log10_pvalues.csv"), &report::log10_pvalues_csv(&records, truth))?;
    let (na, ni) = class_counts(&test);
    println!("swept {} test examples ({na} active, {ni} inactive); reports in {}", test.len(), dir.display());
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> Result<(), RunError> {
    if args.model.is_none() && args.scores.is_none() {
        return Err(RunError::Config("nothing to inspect: pass --model and/or --scores".into()));
    }
    if let Some(path) = &args.model {
        let m = load_model(path)?;
        let n_active = m.sv_labels.iter().filter(|&&l| l == Label::Active).count();
        println!("kernel: {}", m.kernel);
        println!(
            "support vectors: {} ({} active, {} inactive)",
            m.num_support_vectors(),
            n_active,
            m.num_support_vectors() - n_active
        );
        println!("C: {}", m.c);
        println!("class weights: active {}, inactive {}", m.class_weights.active, m.class_weights.inactive);
        println!("bias: {}", m.bias);
        println!("dual objective: {}", m.objective);
        println!("converged: {} after {} iterations", m.converged, m.iterations);
    }
    if let Some(path) = &args.scores {
        let (cal, ncm) = read_calibration(path).map_err(|e| RunError::Data(format!("{}: {e}", path.display())))?;
        println!("calibration measure: {ncm}");
        println!(
            "calibration examples: {} active, {} inactive",
            cal.count(Label::Active),
            cal.count(Label::Inactive)
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Validate(a) => cmd_validate(a),
        Command::TrainSvm(a) => cmd_train(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
