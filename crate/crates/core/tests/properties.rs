mod common;

use std::collections::{HashMap, HashSet};

use common::brute_p_value;
use icp_core::conformal::{calibration_from_str, calibration_to_string, smoothed_p_value};
use icp_core::data::{parse_sparse, split_indices};
use icp_core::metrics::{eps_sweep, region_table};
use icp_core::ncm::{knn_ncm, train_nb, Distance};
use icp_core::{
    p_value, CalibrationScores, Dataset, Epsilons, KernelSpec, Label, PValues, PredictionRecord, Region, SparseVector,
    SplitSpec,
};
use proptest::prelude::*;

fn sparse_vector() -> impl Strategy<Value = SparseVector> {
    prop::collection::btree_map(0u32..40, 1u32..5, 0..10)
        .prop_map(|m| SparseVector::from_pairs(m.into_iter().map(|(i, v)| (i, v as f64))).unwrap())
}

fn nonempty_vector() -> impl Strategy<Value = SparseVector> {
    sparse_vector().prop_filter("non-empty", |v| !v.is_empty())
}

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Active), Just(Label::Inactive)]
}

fn score() -> impl Strategy<Value = f64> {
    prop_oneof![
        4 => -5.0..5.0f64,
        1 => Just(f64::INFINITY),
        1 => Just(0.0),
        1 => Just(1.0),
    ]
}

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(score(), 1..30)
}

fn dataset(min: usize, max: usize) -> impl Strategy<Value = Dataset> {
    prop::collection::vec((sparse_vector(), label()), min..max).prop_map(|rows| {
        let (vectors, labels) = rows.into_iter().unzip();
        Dataset::new(vectors, labels, 40).unwrap()
    })
}

proptest! {
    #[test]
    fn p_value_matches_counting_and_is_monotone(
        active in scores(), inactive in scores(), a in score(), b in score()
    ) {
        let cal = CalibrationScores::new(active.clone(), inactive.clone()).unwrap();
        for (y, s) in [(Label::Active, &active), (Label::Inactive, &inactive)] {
            let pa = p_value(&cal, a, y);
            prop_assert_eq!(pa, brute_p_value(s, a));
            prop_assert!(pa > 0.0 && pa <= 1.0);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(p_value(&cal, lo, y) >= p_value(&cal, hi, y));
        }
    }

    #[test]
    fn smoothed_p_value_bracketed(cal_scores in scores(), a in score(), tau in 0.001..=1.0f64) {
        let cal = CalibrationScores::new(cal_scores.clone(), vec![0.0]).unwrap();
        let det = p_value(&cal, a, Label::Active);
        let smooth = smoothed_p_value(&cal, a, Label::Active, tau);
        let strictly_greater = cal_scores.iter().filter(|&&s| s > a).count() as f64;
        prop_assert!(smooth <= det + 1e-15);
        prop_assert!(smooth > strictly_greater / (cal_scores.len() + 1) as f64);
        prop_assert_eq!(smoothed_p_value(&cal, a, Label::Active, 1.0), det);
    }

    #[test]
    fn calibration_file_round_trip(active in scores(), inactive in scores()) {
        let cal = CalibrationScores::new(active, inactive).unwrap();
        let (back, ncm) = calibration_from_str(&calibration_to_string(&cal, "svm test")).unwrap();
        prop_assert_eq!(back, cal);
        prop_assert_eq!(ncm, "svm test");
    }

    #[test]
    fn sparse_text_round_trip(ds in dataset(1, 30), with_ids in any::<bool>()) {
        let ds = if with_ids {
            let ids = (0..ds.len()).map(|i| format!("m{i}")).collect();
            ds.with_ids(ids).unwrap()
        } else {
            ds
        };
        let back = parse_sparse(ds.to_sparse_text().as_bytes()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn split_is_disjoint_and_sized(
        total in 3usize..300, proper_frac in 0.1..0.6f64, test_frac in 0.0..0.3f64, seed in any::<u64>()
    ) {
        let proper = ((total as f64 * proper_frac) as usize).max(1);
        let test = (total as f64 * test_frac) as usize;
        prop_assume!(proper + test < total);
        let spec = SplitSpec::with_remainder(total, proper, test, seed).unwrap();
        let idx = split_indices(total, &spec).unwrap();
        prop_assert_eq!(idx.proper_train.len(), proper);
        prop_assert_eq!(idx.test.len(), test);
        prop_assert_eq!(idx.calibration.len(), total - proper - test);
        let all: HashSet<usize> = idx.proper_train.iter().chain(&idx.calibration).chain(&idx.test).copied().collect();
        prop_assert_eq!(all.len(), total);
        prop_assert!(all.iter().all(|&i| i < total));
        prop_assert_eq!(split_indices(total, &spec).unwrap(), idx);
    }

    #[test]
    fn kernel_symmetry_and_range(a in sparse_vector(), b in sparse_vector(), gamma in 0.01..10.0f64) {
        for spec in [
            KernelSpec::Linear,
            KernelSpec::Tanimoto,
            KernelSpec::Rbf { gamma },
            KernelSpec::TanimotoRbf { gamma },
        ] {
            prop_assert_eq!(spec.eval(&a, &b), spec.eval(&b, &a));
        }
        let t = KernelSpec::Tanimoto.eval(&a, &b);
        prop_assert!((0.0..=1.0).contains(&t));
        let r = KernelSpec::Rbf { gamma }.eval(&a, &b);
        prop_assert!(r > 0.0 || a != b);
        prop_assert!(r <= 1.0);
        prop_assert_eq!(KernelSpec::Rbf { gamma }.eval(&a, &a), 1.0);
        prop_assert_eq!(KernelSpec::TanimotoRbf { gamma }.eval(&a, &a), 1.0);
    }

    #[test]
    fn tanimoto_self_similarity(a in nonempty_vector()) {
        prop_assert_eq!(KernelSpec::Tanimoto.eval(&a, &a), 1.0);
    }

    #[test]
    fn knn_score_nonnegative_and_zero_only_for_exact_neighbours(
        ds in dataset(6, 25), x in sparse_vector(), y in label(), k in 1usize..3,
    ) {
        let same = ds.labels().iter().filter(|&&l| l == y).count();
        let other = ds.len() - same;
        prop_assume!(same >= k && other >= k);
        for metric in [Distance::Tanimoto, Distance::Euclidean] {
            let alpha = knn_ncm(&ds, k, metric, &x, y, None);
            prop_assert!(alpha >= 0.0);
            let mut d: Vec<f64> = ds.iter().filter(|(_, l)| *l == y).map(|(v, _)| metric.eval(v, &x)).collect();
            d.sort_by(f64::total_cmp);
            let nearest_all_zero = d[..k].iter().all(|&v| v == 0.0);
            prop_assert_eq!(alpha == 0.0, nearest_all_zero);
        }
    }

    #[test]
    fn nb_posteriors_sum_to_one(ds in dataset(4, 30), x in sparse_vector(), smoothing in 0.01..100.0f64) {
        let (na, ni) = icp_core::class_counts(&ds);
        prop_assume!(na > 0 && ni > 0);
        let nb = train_nb(&ds, smoothing).unwrap();
        let total = (-nb.neg_log_posterior(&x, Label::Active)).exp() + (-nb.neg_log_posterior(&x, Label::Inactive)).exp();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for l in Label::BOTH {
            let mass: f64 = nb.log_likelihoods(l).iter().map(|v| v.exp()).sum();
            prop_assert!((mass - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forced_prediction_and_region_are_consistent(
        pa in 0.001..=1.0f64, pi in 0.001..=1.0f64, ea in 0.0..=1.0f64, ei in 0.0..=1.0f64
    ) {
        let eps = Epsilons::new(ea, ei).unwrap();
        let r = PredictionRecord::from_p_values(PValues { active: pa, inactive: pi }, &eps);
        prop_assert_eq!(r.credibility, pa.max(pi));
        prop_assert_eq!(r.confidence, 1.0 - pa.min(pi));
        prop_assert_eq!(r.region.contains(Label::Active), pa > ea);
        prop_assert_eq!(r.region.contains(Label::Inactive), pi > ei);
        if pa == pi {
            prop_assert!(r.forced_tie);
            prop_assert_eq!(r.forced_label, Label::Inactive);
        } else {
            prop_assert_eq!(r.forced_label == Label::Active, pa > pi);
        }
    }

    #[test]
    fn region_counts_partition_and_uncertain_shrinks(
        rows in prop::collection::vec((0.001..=1.0f64, 0.001..=1.0f64, label()), 1..200)
    ) {
        let p: Vec<PValues> = rows.iter().map(|&(a, i, _)| PValues { active: a, inactive: i }).collect();
        let truth: Vec<Label> = rows.iter().map(|r| r.2).collect();
        let grid = [0.0, 0.01, 0.05, 0.1, 0.2, 0.5, 1.0];
        let sweep = eps_sweep(&p, &truth, &grid).unwrap();
        for row in &sweep {
            prop_assert_eq!(row.table.six_way().iter().sum::<f64>(), rows.len() as f64);
        }
        prop_assert!(sweep.windows(2).all(|w| w[1].table.uncertain() <= w[0].table.uncertain()));

        let eps = Epsilons::both(0.05).unwrap();
        let records: Vec<PredictionRecord> = p.iter().map(|&pv| PredictionRecord::from_p_values(pv, &eps)).collect();
        let table = region_table(&records, &truth).unwrap();
        let mut tally: HashMap<(Region, Label), usize> = HashMap::new();
        for (r, &t) in records.iter().zip(&truth) {
            *tally.entry((r.region, t)).or_default() += 1;
        }
        let count = |region, label| *tally.get(&(region, label)).unwrap_or(&0) as f64;
        prop_assert_eq!(table.active_pred_active, count(Region::Active, Label::Active));
        prop_assert_eq!(table.inactive_pred_active, count(Region::Active, Label::Inactive));
        prop_assert_eq!(table.uncertain(), count(Region::Uncertain, Label::Active) + count(Region::Uncertain, Label::Inactive));
    }
}
