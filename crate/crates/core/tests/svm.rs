mod common;

use common::*;
use icp_core::data::class_counts;
use icp_core::svm::{
    cross_validate, read_model, train_cascade, train_svm, write_model, CascadeConfig, ClassWeights, CvConfig,
    SvmConfig, SvmError,
};
use icp_core::synth::{synthetic_dataset, SyntheticTask};
use icp_core::{Dataset, KernelSpec, Label, SparseVector};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tanimoto_rbf() -> KernelSpec {
    KernelSpec::TanimotoRbf { gamma: 1.0 }
}

#[test]
fn weighted_box_constraints_on_imbalanced_set() {
    let train = synthetic_dataset(&SyntheticTask::default(), 400, 0.05, 1);
    let weights = ClassWeights::inverse_frequency(&train);
    assert_eq!(weights.active, 19.0);
    assert_eq!(weights.inactive, 1.0);
    let mut cfg = SvmConfig::new(0.5, tanimoto_rbf());
    cfg.class_weights = weights;
    let model = train_svm(&train, &cfg).unwrap();
    let mut balance = 0.0;
    for (coef, label) in model.dual_coefs.iter().zip(&model.sv_labels) {
        let bound = cfg.upper_bound(*label);
        assert!(coef.abs() <= bound + 1e-12, "|{coef}| > {bound}");
        assert_eq!(coef.signum(), label.sign());
        balance += coef;
    }
    assert!(balance.abs() < 1e-6);
    // some Active coefficient exceeds the unweighted bound
    assert!(model
        .dual_coefs
        .iter()
        .zip(&model.sv_labels)
        .any(|(c, l)| *l == Label::Active && c.abs() > cfg.c));
}

#[test]
fn free_support_vectors_sit_on_the_margin() {
    let train = synthetic_dataset(&SyntheticTask::default(), 300, 0.2, 2);
    let mut cfg = SvmConfig::new(1.0, tanimoto_rbf());
    cfg.tolerance = 1e-6;
    let model = train_svm(&train, &cfg).unwrap();
    let mut free = 0;
    for i in 0..model.num_support_vectors() {
        let a = model.dual_coefs[i].abs();
        let bound = cfg.upper_bound(model.sv_labels[i]);
        if a < bound * (1.0 - 1e-6) {
            free += 1;
            let d = model.decision_function(&model.support_vectors[i]);
            assert!((d - model.sv_labels[i].sign()).abs() <= 1e-5, "free SV decision value {d}");
        }
    }
    assert!(free > 0);
}

#[test]
fn kkt_conditions_hold_on_training_points() {
    let train = synthetic_dataset(&SyntheticTask::default(), 200, 0.3, 3);
    let mut cfg = SvmConfig::new(2.0, tanimoto_rbf());
    cfg.tolerance = 1e-6;
    let model = train_svm(&train, &cfg).unwrap();
    let mut alpha = vec![0.0; train.len()];
    for (k, &i) in model.sv_indices.iter().enumerate() {
        alpha[i] = model.dual_coefs[k].abs();
    }
    for (i, (x, y)) in train.iter().enumerate() {
        let margin = y.sign() * model.decision_function(x);
        let upper = cfg.upper_bound(y);
        if alpha[i] == 0.0 {
            assert!(margin >= 1.0 - 1e-5, "zero coefficient but margin {margin}");
        } else if alpha[i] >= upper {
            assert!(margin <= 1.0 + 1e-5, "bounded coefficient but margin {margin}");
        }
    }
}

#[test]
fn random_small_problems_match_brute_force_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for trial in 0..20 {
        let n = 3 + trial % 6;
        let dim = 8;
        let vectors: Vec<SparseVector> = (0..n).map(|_| random_sparse(&mut rng, dim, 4, 3)).collect();
        if (0..n).any(|i| (0..i).any(|j| vectors[i] == vectors[j])) {
            continue;
        }
        let labels: Vec<Label> = (0..n)
            .map(|i| match i {
                0 => Label::Active,
                1 => Label::Inactive,
                _ if rng.random_bool(0.4) => Label::Active,
                _ => Label::Inactive,
            })
            .collect();
        let gamma = rng.random_range(0.1..0.6);
        let train = Dataset::new(vectors, labels, dim).unwrap();
        let mut cfg = SvmConfig::new(5.0, KernelSpec::Rbf { gamma });
        cfg.tolerance = 1e-9;
        let model = train_svm(&train, &cfg).unwrap();

        let rows: Vec<Vec<f64>> = train.vectors().iter().map(|x| dense(x, dim)).collect();
        let k = DMatrix::from_fn(n, n, |i, j| dense_rbf(&rows[i], &rows[j], gamma));
        let y: Vec<f64> = train.labels().iter().map(|l| l.sign()).collect();
        let optimum = brute_force_qp(&k, &y, &vec![5.0; n]);
        let mut alpha = vec![0.0; n];
        for (s, &i) in model.sv_indices.iter().enumerate() {
            alpha[i] = model.dual_coefs[s].abs();
        }
        assert!((qp_objective(&k, &y, &alpha) - optimum.objective).abs() < 1e-6);
        assert!((model.objective - optimum.objective).abs() < 1e-6);
    }
}

#[test]
fn degenerate_cascade_equals_monolithic_training() {
    let train = synthetic_dataset(&SyntheticTask::default(), 150, 0.2, 4);
    let cfg = SvmConfig::new(1.0, tanimoto_rbf());
    let mono = train_svm(&train, &cfg).unwrap();
    let fit = train_cascade(&train, &cfg, &CascadeConfig::new(500)).unwrap();
    assert_eq!(fit.num_blocks, 1);
    assert_eq!(fit.model.sv_indices, mono.sv_indices);
    assert_eq!(fit.model.dual_coefs, mono.dual_coefs);
    assert_eq!(fit.model.bias, mono.bias);
}

#[test]
fn cascade_stops_at_sv_fixed_point() {
    let train = synthetic_dataset(&SyntheticTask::default(), 400, 0.1, 5);
    let mut cfg = SvmConfig::new(1.0, tanimoto_rbf());
    cfg.class_weights = ClassWeights::inverse_frequency(&train);
    let mut cascade = CascadeConfig::new(100);
    cascade.max_outer_iterations = 10;
    let fit = train_cascade(&train, &cfg, &cascade).unwrap();
    assert!(fit.converged);
    assert!(fit.outer_iterations < 10);
    assert_eq!(fit.sv_counts.len(), fit.outer_iterations);
    assert!(fit.model.sv_indices.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn cascade_rejects_bad_configuration() {
    let train = synthetic_dataset(&SyntheticTask::default(), 50, 0.2, 6);
    let cfg = SvmConfig::new(1.0, tanimoto_rbf());
    assert!(matches!(
        train_cascade(&train, &cfg, &CascadeConfig::new(1)),
        Err(SvmError::InvalidConfig(_))
    ));
}

fn two_clusters(n_per_class: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for i in 0..2 * n_per_class {
        let label = if i % 2 == 0 { Label::Active } else { Label::Inactive };
        let base = if label == Label::Active { 0 } else { 10 };
        let pairs: Vec<(u32, f64)> = (0..5).map(|f| (base + f, rng.random_range(1..4) as f64)).collect();
        vectors.push(SparseVector::from_pairs(pairs).unwrap());
        labels.push(label);
    }
    Dataset::new(vectors, labels, 20).unwrap()
}

#[test]
fn cross_validation_single_value_grid() {
    let train = two_clusters(10, 1);
    let report = cross_validate(&train, &SvmConfig::new(1.0, tanimoto_rbf()), &[3.0], &CvConfig::default()).unwrap();
    assert_eq!(report.best_c, 3.0);
    assert!(report.scores.is_empty());
}

#[test]
fn cross_validation_tie_picks_smallest_c() {
    let train = two_clusters(10, 2);
    let report =
        cross_validate(&train, &SvmConfig::new(1.0, tanimoto_rbf()), &[10.0, 1.0, 100.0], &CvConfig::default())
            .unwrap();
    assert!(report.scores.iter().all(|&(_, s)| s == 1.0));
    assert_eq!(report.best_c, 1.0);
}

#[test]
fn cross_validation_picks_strictly_better_c() {
    let train = synthetic_dataset(&SyntheticTask::default(), 200, 0.2, 8);
    let report = cross_validate(
        &train,
        &SvmConfig::new(1.0, tanimoto_rbf()),
        &[1e-4, 10.0],
        &CvConfig {
            folds: 5,
            seed: 3,
            ..Default::default()
        },
    )
    .unwrap();
    let (small, large) = (report.scores[0].1, report.scores[1].1);
    assert!(large > small, "scores {:?}", report.scores);
    assert_eq!(report.best_c, 10.0);
}

#[test]
fn cross_validation_reduces_folds_to_minority_size() {
    let train = synthetic_dataset(&SyntheticTask::default(), 60, 0.05, 9);
    assert_eq!(class_counts(&train).0, 3);
    let report =
        cross_validate(&train, &SvmConfig::new(1.0, tanimoto_rbf()), &[0.1, 1.0], &CvConfig::default()).unwrap();
    assert_eq!(report.folds, 3);

    let dropped = &train.indices_of(Label::Active)[..2];
    let keep: Vec<usize> = (0..train.len()).filter(|i| !dropped.contains(i)).collect();
    let one_active = train.subset(&keep);
    assert_eq!(class_counts(&one_active).0, 1);
    assert!(matches!(
        cross_validate(&one_active, &SvmConfig::new(1.0, tanimoto_rbf()), &[0.1, 1.0], &CvConfig::default()),
        Err(SvmError::CrossValidation(_))
    ));
}

#[test]
fn model_file_round_trip_preserves_predictions() {
    let train = synthetic_dataset(&SyntheticTask::default(), 120, 0.2, 10);
    let model = train_svm(&train, &SvmConfig::new(1.0, tanimoto_rbf())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.txt");
    write_model(&path, &model).unwrap();
    let back = read_model(&path).unwrap();
    for x in train.vectors() {
        assert_eq!(back.decision_function(x), model.decision_function(x));
    }
}
