use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use icp_core::synth::{synthetic_dataset, SyntheticTask};

fn icp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icp")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn data(dir: &Path, name: &str, n: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    synthetic_dataset(&SyntheticTask::default(), n, 0.2, seed)
        .write_sparse_file(&path)
        .unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_with_config_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let train = data(dir.path(), "train.txt", 300, 1);
    let out = dir.path().join("out");
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        format!(
            "train = {:?}\ntest_size = 80\nproper_train_size = 120\nrepetitions = 4\nseed = 2\noutput_dir = {:?}\n",
            s(&train),
            s(&out)
        ),
    )
    .unwrap();
    let o = icp(&["run", "--config", s(&config), "--repetitions", "2", "--eps", "0.1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("cycle_01").exists());
    assert!(!out.join("cycle_02").exists());
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"eps_active\": 0.1"));
    assert!(manifest.contains("\"test_size\": 80"));
}

#[test]
fn exit_codes_by_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(icp(&["--help"]).status.code(), Some(0));
    assert_eq!(icp(&["run", "--no-such-flag"]).status.code(), Some(1));
    let missing = dir.path().join("missing.txt");
    assert_eq!(icp(&["run", "--train", s(&missing)]).status.code(), Some(1));

    let config = dir.path().join("bad.toml");
    fs::write(&config, "train = \"x\"\nunknown_key = 3\n").unwrap();
    assert_eq!(icp(&["run", "--config", s(&config)]).status.code(), Some(1));

    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "A 1:1\nA 0:1\n").unwrap();
    let o = icp(&["train-svm", "--train", s(&bad), "--out", s(&dir.path().join("m"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn train_calibrate_predict_sweep_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let train = data(d, "train.txt", 150, 1);
    let cal = data(d, "cal.txt", 150, 2);
    let test = data(d, "test.txt", 60, 3);
    let model = d.join("model.txt");
    let scores = d.join("scores.txt");

    let o = icp(&["train-svm", "--train", s(&train), "--out", s(&model), "--c", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = icp(&["calibrate", "--model", s(&model), "--calibration", s(&cal), "--out", s(&scores)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let o = icp(&["predict", "--model", s(&model), "--scores", s(&scores), "--test", s(&test), "--eps", "0.1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = stdout(&o);
    assert_eq!(csv.lines().next().unwrap(), "id,p_active,p_inactive,region,forced,credibility,confidence");
    assert_eq!(csv.lines().count(), 61);

    let sweep_dir = d.join("sweep");
    let o = icp(&[
        "sweep", "--model", s(&model), "--scores", s(&scores), "--test", s(&test),
        "--decision-grid", "-1,0,1", "--output-dir", s(&sweep_dir),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["sweep_eps.csv", "sweep_asym.csv", "cred_conf_sweep.csv", "pr_curves.csv", "log10_pvalues.csv"] {
        assert!(sweep_dir.join(f).exists(), "{f}");
    }

    let o = icp(&["inspect", "--model", s(&model), "--scores", s(&scores)]);
    let text = stdout(&o);
    assert!(text.contains("C: 2"));
    assert!(text.contains("calibration examples:"));

    // scores produced by one measure cannot be used with another
    let o = icp(&["predict", "--train", s(&train), "--underlying", "knn", "--scores", s(&scores), "--test", s(&test)]);
    assert_eq!(o.status.code(), Some(1));

    let mut text = fs::read_to_string(&model).unwrap();
    text = text.replacen("bias", "bias 1", 1);
    fs::write(&model, text).unwrap();
    assert_eq!(icp(&["inspect", "--model", s(&model)]).status.code(), Some(2));

    let text = fs::read_to_string(&scores).unwrap().replacen("inactive", "inactive 1", 1);
    fs::write(&scores, text).unwrap();
    assert_eq!(icp(&["inspect", "--scores", s(&scores)]).status.code(), Some(2));
}

#[test]
fn validate_reports_each_cell() {
    let o = icp(&[
        "validate", "--num-examples", "800", "--test-size", "250", "--proper-train-size", "300",
        "--cycles", "4", "--eps-grid", "0.1,0.2", "--underlying", "nb",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().next().unwrap(), "label,eps,mean_error_rate,bound,result");
    assert_eq!(text.lines().filter(|l| l.contains(',') && (l.ends_with("PASS") || l.ends_with("FAIL"))).count(), 4);
    assert!(text.lines().last().unwrap().starts_with("overall:"));
}
