use std::path::Path;
use std::process::{Command, Output};

use kode::data::{load_csv, sample_reference, save_csv, Standardizer};
use kode::flow::{TimeMode, VelocityField};
use kode::kernels::KernelSpec;
use kode::model::TransportModel;
use ndarray::s;
use tempfile::TempDir;

fn kode(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kode"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn kode")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A directory holding moons train/val/test CSVs and a model trained on them.
fn trained_moons() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert!(
        kode(root, &["generate", "moons", "4000", "--seed", "1", "-o", "all.csv"])
            .status
            .success()
    );
    let all = load_csv(root.join("all.csv")).unwrap();
    save_csv(root.join("train.csv"), all.slice(s![..2500, ..])).unwrap();
    save_csv(root.join("val.csv"), all.slice(s![2500..3000, ..])).unwrap();
    save_csv(root.join("test.csv"), all.slice(s![3000.., ..])).unwrap();
    std::fs::write(
        root.join("cfg.json"),
        r#"{"output_dir": "run", "train_data": "train.csv", "val_data": "val.csv",
            "test_data": "test.csv", "epochs": 20, "seed": 2}"#,
    )
    .unwrap();
    let out = kode(root, &["train", "cfg.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    dir
}

fn zero_model(root: &Path) {
    let inducing = sample_reference(5, 2, 1);
    let field = VelocityField::zeros(
        inducing,
        KernelSpec::gaussian(0.5).unwrap(),
        10,
        TimeMode::NonAutonomous,
        0,
    )
    .unwrap();
    let std = Standardizer::new(ndarray::array![1.0, -2.0], ndarray::array![2.0, 0.5]).unwrap();
    let model = TransportModel::new(field, std, KernelSpec::laplace(1.0).unwrap()).unwrap();
    model.save(root.join("zero.json")).unwrap();
}

#[test]
fn generate_writes_requested_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = kode(
        dir.path(),
        &["generate", "moons", "25000", "--seed", "7", "-o", "moons.csv"],
    );
    assert!(out.status.success());
    assert_eq!(load_csv(dir.path().join("moons.csv")).unwrap().dim(), (25000, 2));
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.csv", "b.csv"] {
        assert!(kode(
            dir.path(),
            &["generate", "checkerboard", "500", "--seed", "3", "-o", name]
        )
        .status
        .success());
    }
    assert_eq!(
        std::fs::read(dir.path().join("a.csv")).unwrap(),
        std::fs::read(dir.path().join("b.csv")).unwrap()
    );
}

#[test]
fn generate_rejects_unknown_name_and_bad_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = kode(dir.path(), &["generate", "banana", "10", "-o", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("banana"));
    let out = kode(dir.path(), &["generate", "moons", "10", "-o", "missing/x.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_rejects_unknown_key_by_name() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"output_dir": "o", "benchmark": "moons", "learning_rat": 0.1}"#,
    )
    .unwrap();
    let out = kode(dir.path(), &["train", "cfg.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("learning_rat"), "{}", stderr(&out));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn train_validates_paths_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"output_dir": "o", "train_data": "nope.csv", "val_data": "nope.csv"}"#,
    )
    .unwrap();
    let out = kode(dir.path(), &["train", "cfg.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.csv"));
    std::fs::write(
        dir.path().join("bad.json"),
        r#"{"output_dir": "o", "benchmark": "moons", "lengthscale": "mean"}"#,
    )
    .unwrap();
    assert_eq!(kode(dir.path(), &["train", "bad.json"]).status.code(), Some(2));
    std::fs::write(
        dir.path().join("bad2.json"),
        r#"{"output_dir": "o", "benchmark": "moons", "field_lengthscale": "mean"}"#,
    )
    .unwrap();
    assert_eq!(kode(dir.path(), &["train", "bad2.json"]).status.code(), Some(2));
}

#[test]
fn train_outputs_and_rerun_identity() {
    let dir = trained_moons();
    let root = dir.path();
    for f in ["model.json", "trace.csv", "report.json"] {
        assert!(root.join("run").join(f).is_file(), "{f}");
    }
    let first = std::fs::read(root.join("run/model.json")).unwrap();
    assert!(kode(root, &["train", "cfg.json"]).status.success());
    assert_eq!(first, std::fs::read(root.join("run/model.json")).unwrap());
    let model = TransportModel::load(root.join("run/model.json")).unwrap();
    let recorded = model.meta.test_nmmd.unwrap();
    assert!(recorded > 0.0 && recorded < 1.0, "{recorded}");
    let trace = std::fs::read_to_string(root.join("run/trace.csv")).unwrap();
    assert!(trace.starts_with("epoch,train_loss,val_nmmd,penalty,seconds\n"));
}

#[test]
fn sample_forward_backward_round_trip() {
    let dir = trained_moons();
    let root = dir.path();
    assert!(kode(
        root,
        &["sample", "run/model.json", "5000", "--seed", "4", "-o", "x.csv"]
    )
    .status
    .success());
    let x = load_csv(root.join("x.csv")).unwrap();
    assert_eq!(x.dim(), (5000, 2));
    assert!(kode(
        root,
        &["sample", "run/model.json", "--backward", "x.csv", "-o", "z.csv"]
    )
    .status
    .success());
    let z = load_csv(root.join("z.csv")).unwrap();
    let gap = (&z - &sample_reference(5000, 2, 4))
        .iter()
        .fold(0.0f64, |m, e| m.max(e.abs()));
    assert!(gap < 1e-3, "{gap}");
}

#[test]
fn sample_condition_requires_triangular_model() {
    let dir = trained_moons();
    let out = kode(
        dir.path(),
        &["sample", "run/model.json", "10", "--condition", "0.1", "-o", "c.csv"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("mask_dim"));
}

#[test]
fn triangular_training_and_conditioning() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let z = sample_reference(1500, 2, 8);
    let mut x = z.clone();
    x.column_mut(1).assign(&(&z.column(0) * 0.8 + &z.column(1) * 0.6));
    save_csv(root.join("t.csv"), x.slice(s![..1000, ..])).unwrap();
    save_csv(root.join("v.csv"), x.slice(s![1000.., ..])).unwrap();
    std::fs::write(
        root.join("cfg.json"),
        r#"{"output_dir": "tri", "train_data": "t.csv", "val_data": "v.csv", "mask_dim": 1, "epochs": 5}"#,
    )
    .unwrap();
    assert!(kode(root, &["train", "cfg.json"]).status.success());
    let out = kode(
        root,
        &["sample", "tri/model.json", "50", "--condition", "-0.5", "-o", "c.csv"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(load_csv(root.join("c.csv")).unwrap().dim(), (50, 1));
    let out = kode(
        root,
        &["sample", "tri/model.json", "50", "--condition", "40", "-o", "far.csv"],
    );
    assert!(out.status.success());
    assert!(stderr(&out).contains("extrapolated"));
    let out = kode(
        root,
        &["sample", "tri/model.json", "50", "--condition", "1,2", "-o", "c2.csv"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_self_zero_and_errors() {
    let dir = trained_moons();
    let root = dir.path();
    assert!(kode(
        root,
        &["sample", "run/model.json", "10000", "--seed", "21", "-o", "own.csv"]
    )
    .status
    .success());
    let out = kode(
        root,
        &[
            "evaluate",
            "run/model.json",
            "own.csv",
            "--reference-seed",
            "5",
            "--report",
            "r.json",
        ],
    );
    assert!(out.status.success());
    let v: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!(v < 0.1, "{v}");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["normalized_mmd"].as_f64().unwrap(), v);
    let again = kode(
        root,
        &["evaluate", "run/model.json", "own.csv", "--reference-seed", "5"],
    );
    assert_eq!(out.stdout, again.stdout);

    zero_model(root);
    let out = kode(root, &["evaluate", "zero.json", "test.csv", "--reference-seed", "5"]);
    let v: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!((v - 1.0).abs() < 0.1, "{v}");

    save_csv(root.join("wide.csv"), sample_reference(20, 3, 1).view()).unwrap();
    let out = kode(root, &["evaluate", "run/model.json", "wide.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn trajectories_layout() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    zero_model(root);
    assert!(
        kode(root, &["trajectories", "zero.json", "7", "--seed", "3", "-o", "t.csv"])
            .status
            .success()
    );
    let text = std::fs::read_to_string(root.join("t.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "sample_id,t,x1,x2");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 7 * 11);
    let ts: Vec<f64> = rows[..11].iter().map(|r| r[1]).collect();
    assert_eq!(ts[0], 0.0);
    assert_eq!(ts[10], 1.0);
    assert!(ts.windows(2).all(|w| (w[1] - w[0] - 0.1).abs() < 1e-12));
    let start = sample_reference(7, 2, 3);
    for (i, chunk) in rows.chunks(11).enumerate() {
        assert_eq!(chunk[0][0] as usize, i);
        let want = [1.0 + 2.0 * start[[i, 0]], -2.0 + 0.5 * start[[i, 1]]];
        assert!((chunk[0][2] - want[0]).abs() < 1e-12 && (chunk[0][3] - want[1]).abs() < 1e-12);
        assert!(chunk.iter().all(|r| r[2] == chunk[0][2] && r[3] == chunk[0][3]));
    }
}

#[test]
fn bad_model_file_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(root.join("m.json"), "{\"format_version\": 7}").unwrap();
    let out = kode(root, &["sample", "m.json", "5", "-o", "x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("format_version"));
    let out = Command::new(env!("CARGO_BIN_EXE_kode"))
        .args(["generate", "moons", "5", "-o", "x.csv"])
        .env("KODE_THREADS", "0")
        .current_dir(root)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_kode"))
        .args(["generate", "moons", "5", "-o", "x.csv"])
        .env("KODE_THREADS", "1")
        .current_dir(root)
        .output()
        .unwrap();
    assert!(out.status.success());
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(kode(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(kode(dir.path(), &["train"]).status.code(), Some(2));
}

#[test]
fn theory_check_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = kode(
        dir.path(),
        &[
            "theory-check",
            "--mmd-trials",
            "500",
            "--ode-trials",
            "50",
            "--report",
            "t.json",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("t.json")).unwrap()).unwrap();
    assert_eq!(v["mmd_stability"]["passed"], true);
    assert_eq!(v["ode_perturbation"]["passed"], true);
    assert!(v["convergence_slope"].as_f64().unwrap() > 2.0);
}

#[test]
fn lotka_volterra_small_run() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(
        root.join("lv.json"),
        r#"{"output_dir": "lv", "n_pairs": 1000, "n_val": 200, "n_posterior": 300, "mcmc_steps": 2000, "epochs": 2}"#,
    )
    .unwrap();
    let out = kode(root, &["lotka-volterra", "lv.json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(load_csv(root.join("lv/posterior_kode.csv")).unwrap().dim(), (300, 4));
    assert_eq!(load_csv(root.join("lv/posterior_mcmc.csv")).unwrap().dim(), (1800, 4));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("lv/report.json")).unwrap()).unwrap();
    assert_eq!(v["parameters"].as_array().unwrap().len(), 4);
    std::fs::write(
        root.join("bad.json"),
        r#"{"output_dir": "lv2", "n_pairs": 10, "mcmc_steps": 5}"#,
    )
    .unwrap();
    assert_eq!(kode(root, &["lotka-volterra", "bad.json"]).status.code(), Some(2));
}
