use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use icp_core::conformal::ConformalPredictor;
use icp_core::synth::{synthetic_dataset, SyntheticTask};
use icp_core::{train_cascade, train_svm, CascadeConfig, ClassWeights, KernelSpec, Ncm, SvmConfig};

fn svm_config(train: &icp_core::Dataset) -> SvmConfig {
    let mut cfg = SvmConfig::new(1.0, KernelSpec::TanimotoRbf { gamma: 1.0 });
    cfg.class_weights = ClassWeights::inverse_frequency(train);
    cfg
}

fn smo(c: &mut Criterion) {
    let mut group = c.benchmark_group("smo");
    group.sample_size(10);
    for n in [500usize, 2000] {
        let train = synthetic_dataset(&SyntheticTask::default(), n, 0.05, 3);
        let cfg = svm_config(&train);
        group.bench_with_input(BenchmarkId::from_parameter(n), &train, |bench, train| {
            bench.iter(|| train_svm(train, &cfg).unwrap())
        });
    }
    group.finish();
}

fn cascade(c: &mut Criterion) {
    let train = synthetic_dataset(&SyntheticTask::default(), 4000, 0.05, 4);
    let cfg = svm_config(&train);
    let mut group = c.benchmark_group("cascade_4000");
    group.sample_size(10);
    for block in [500usize, 1000] {
        group.bench_with_input(BenchmarkId::from_parameter(block), &block, |bench, &block| {
            bench.iter(|| train_cascade(&train, &cfg, &CascadeConfig::new(block)).unwrap())
        });
    }
    group.finish();
}

fn calibrate_and_predict(c: &mut Criterion) {
    let task = SyntheticTask::default();
    let proper = synthetic_dataset(&task, 1000, 0.05, 5);
    let calibration = synthetic_dataset(&task, 2000, 0.05, 6);
    let test = synthetic_dataset(&task, 2000, 0.05, 7);
    let ncm = Ncm::Svm(train_svm(&proper, &svm_config(&proper)).unwrap());
    let mut group = c.benchmark_group("conformal");
    group.sample_size(10);
    group.bench_function("calibrate_2000", |bench| {
        bench.iter(|| ConformalPredictor::calibrate(ncm.clone(), &calibration).unwrap())
    });
    let predictor = ConformalPredictor::calibrate(ncm.clone(), &calibration).unwrap();
    group.bench_function("p_values_2000", |bench| bench.iter(|| predictor.p_values_batch(test.vectors())));
    group.finish();
}

criterion_group!(benches, smo, cascade, calibrate_and_predict);
criterion_main!(benches);
