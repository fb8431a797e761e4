use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_two_classes, cross_validate, train_svm, CvConfig, SvmConfig, SvmError, SvmModel};
use crate::data::{Dataset, Label};

/// When a full pass over the blocks counts as converged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Convergence {
    /// The support-vector index set equals the previous pass's.
    SvSet,
    /// Decision-function signs of consecutive passes agree on at least
    /// `threshold` of a seeded sample of `probe_size` training points.
    DecisionAgreement { threshold: f64, probe_size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub block_size: usize,
    pub max_outer_iterations: usize,
    pub convergence: Convergence,
    /// Seeds the stratified shuffle that forms the blocks.
    pub seed: u64,
    /// When set, `C` is re-selected by cross-validation at every stage.
    pub stage_cv: Option<(Vec<f64>, CvConfig)>,
}

impl CascadeConfig {
    pub fn new(block_size: usize) -> Self {
        Self {
            block_size,
            max_outer_iterations: 5,
            convergence: Convergence::SvSet,
            seed: 0,
            stage_cv: None,
        }
    }

    fn validate(&self) -> Result<(), SvmError> {
        if self.block_size < 2 {
            return Err(SvmError::InvalidConfig("cascade block size must be at least 2".into()));
        }
        if self.max_outer_iterations == 0 {
            return Err(SvmError::InvalidConfig("max_outer_iterations must be at least 1".into()));
        }
        if let Convergence::DecisionAgreement { threshold, probe_size } = self.convergence {
            if !(0.0..=1.0).contains(&threshold) || probe_size == 0 {
                return Err(SvmError::InvalidConfig("invalid decision-agreement criterion".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CascadeFit {
    /// Final model; `sv_indices` refer to positions in the full training set.
    pub model: SvmModel,
    /// Full passes over the blocks that were executed.
    pub outer_iterations: usize,
    /// Whether the convergence criterion was met before the pass budget ran out.
    pub converged: bool,
    pub num_blocks: usize,
    /// Support-vector count at the end of each pass.
    pub sv_counts: Vec<usize>,
}

/// Partitions example positions into blocks of about `block_size`, with each
/// class spread evenly over the blocks after a seeded shuffle. A block left
/// with a single class is merged into its successor (the last one into its
/// predecessor).
pub(crate) fn make_blocks(labels: &[Label], block_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let n = labels.len();
    let num_blocks = n.div_ceil(block_size).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = vec![Vec::new(); num_blocks];
    for label in Label::BOTH {
        let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == label).collect();
        idx.shuffle(&mut rng);
        let m = idx.len();
        for (b, block) in blocks.iter_mut().enumerate() {
            block.extend_from_slice(&idx[b * m / num_blocks..(b + 1) * m / num_blocks]);
        }
    }

    let has_both = |b: &[usize]| {
        b.iter().any(|&i| labels[i] == Label::Active) && b.iter().any(|&i| labels[i] == Label::Inactive)
    };
    let mut merged: Vec<Vec<usize>> = Vec::with_capacity(num_blocks);
    let mut pending: Vec<usize> = Vec::new();
    for block in blocks {
        pending.extend(block);
        if has_both(&pending) {
            merged.push(std::mem::take(&mut pending));
        }
    }
    if !pending.is_empty() {
        match merged.last_mut() {
            Some(last) => last.extend(pending),
            None => merged.push(pending),
        }
    }
    for block in &mut merged {
        block.sort_unstable();
    }
    merged
}

fn sorted_union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = a.iter().chain(b).copied().collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn train_stage(stage: &Dataset, cfg: &SvmConfig, cascade: &CascadeConfig) -> Result<SvmModel, SvmError> {
    let cfg = match &cascade.stage_cv {
        Some((grid, cv)) => SvmConfig {
            c: cross_validate(stage, cfg, grid, cv)?.best_c,
            ..*cfg
        },
        None => *cfg,
    };
    train_svm(stage, &cfg)
}

/// Linear cascade: each stage trains on the previous stage's support vectors
/// merged with the next block. Full passes repeat, starting from the last
/// pass's support vectors, until the convergence criterion holds or
/// `max_outer_iterations` passes have run.
pub fn train_cascade(train: &Dataset, cfg: &SvmConfig, cascade: &CascadeConfig) -> Result<CascadeFit, SvmError> {
    cfg.validate()?;
    cascade.validate()?;
    check_two_classes(train)?;

    let blocks = make_blocks(train.labels(), cascade.block_size, cascade.seed);
    if blocks.len() == 1 {
        let model = train_stage(train, cfg, cascade)?;
        let sv = model.num_support_vectors();
        return Ok(CascadeFit {
            model,
            outer_iterations: 1,
            converged: true,
            num_blocks: 1,
            sv_counts: vec![sv],
        });
    }

    let probe: Vec<usize> = match cascade.convergence {
        Convergence::DecisionAgreement { probe_size, .. } => {
            let mut idx: Vec<usize> = (0..train.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cascade.seed ^ 0x9e37_79b9_7f4a_7c15));
            idx.truncate(probe_size);
            idx
        }
        Convergence::SvSet => Vec::new(),
    };

    let mut carried: Vec<usize> = Vec::new();
    let mut previous: Option<SvmModel> = None;
    let mut sv_counts = Vec::new();
    for outer in 1..=cascade.max_outer_iterations {
        let mut last = None;
        for (b, block) in blocks.iter().enumerate() {
            let stage_idx = sorted_union(&carried, block);
            let stage = train.subset(&stage_idx);
            let mut model = train_stage(&stage, cfg, cascade)?;
            for s in &mut model.sv_indices {
                *s = stage_idx[*s];
            }
            debug!(
                "cascade pass {outer} block {b}: {} examples -> {} SVs",
                stage_idx.len(),
                model.num_support_vectors()
            );
            carried = model.sv_indices.clone();
            last = Some(model);
        }
        let model = last.expect("at least one block");
        sv_counts.push(model.num_support_vectors());

        let done = match (&previous, cascade.convergence) {
            (None, _) => false,
            (Some(prev), Convergence::SvSet) => prev.sv_indices == model.sv_indices,
            (Some(prev), Convergence::DecisionAgreement { threshold, .. }) => {
                let agree = probe
                    .iter()
                    .filter(|&&i| {
                        let x = train.vector(i);
                        (prev.decision_function(x) > 0.0) == (model.decision_function(x) > 0.0)
                    })
                    .count();
                agree as f64 >= threshold * probe.len() as f64
            }
        };
        if done {
            return Ok(CascadeFit {
                model,
                outer_iterations: outer,
                converged: true,
                num_blocks: blocks.len(),
                sv_counts,
            });
        }
        previous = Some(model);
    }
    log::warn!(
        "cascade did not converge within {} passes",
        cascade.max_outer_iterations
    );
    Ok(CascadeFit {
        model: previous.expect("at least one pass"),
        outer_iterations: cascade.max_outer_iterations,
        converged: false,
        num_blocks: blocks.len(),
        sv_counts,
    })
}
