//! End-to-end tests driving the `patchnorm` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_patchnorm"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Generates a sphere fixture and returns (dir, xyz path).
fn sphere_fixture(dir: &Path, count: usize, seed: &str) -> PathBuf {
    run_ok(&[
        "--seed",
        seed,
        "--out-dir",
        dir.to_str().unwrap(),
        "synth",
        "--kind",
        "sphere",
        "--count",
        &count.to_string(),
    ]);
    dir.join("sphere.xyz")
}

fn tiny_train(dir: &Path, seed: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec![
        "--seed",
        seed,
        "--out-dir",
        dir.to_str().unwrap(),
        "train",
        "--synthetic",
        "mixed",
        "--shapes-per-kind",
        "1",
        "--points-per-shape",
        "500",
        "--patches-per-shape",
        "30",
        "--epochs",
        "2",
        "--k",
        "10",
        "--batch-size",
        "32",
    ];
    args.extend_from_slice(extra);
    run_ok(&args);
    dir.join("checkpoint.json")
}

#[test]
fn synth_estimate_eval_flow_is_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let est = tmp.path().join("est");
    let xyz = sphere_fixture(&data, 900, "3");

    let out = run_ok(&[
        "--seed",
        "3",
        "--out-dir",
        est.to_str().unwrap(),
        "estimate",
        "--input",
        xyz.to_str().unwrap(),
        "--estimator",
        "pca",
        "--k",
        "8",
    ]);
    let est_line = stdout(&out)
        .lines()
        .find(|l| l.starts_with("rmse_deg="))
        .expect("summary line")
        .to_string();
    assert!(est.join("sphere.normals").exists());
    assert!(est.join("sphere_beta.csv").exists());
    assert!(est.join("effective-config.toml").exists());

    let ev = tmp.path().join("eval");
    let out = run_ok(&[
        "--out-dir",
        ev.to_str().unwrap(),
        "eval",
        "--pred",
        est.join("sphere.normals").to_str().unwrap(),
        "--gt",
        data.join("sphere.normals").to_str().unwrap(),
    ]);
    let eval_line = stdout(&out)
        .lines()
        .find(|l| l.starts_with("rmse_deg="))
        .expect("summary line")
        .to_string();
    assert_eq!(est_line, eval_line);
}

#[test]
fn gt_estimator_is_a_bitwise_passthrough() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let est = tmp.path().join("est");
    let xyz = sphere_fixture(&data, 300, "1");

    let out = run_ok(&[
        "--out-dir",
        est.to_str().unwrap(),
        "estimate",
        "--input",
        xyz.to_str().unwrap(),
        "--estimator",
        "gt",
    ]);
    assert_eq!(
        fs::read(data.join("sphere.normals")).unwrap(),
        fs::read(est.join("sphere.normals")).unwrap(),
        "gt passthrough must copy the file byte-for-byte"
    );
    assert!(stdout(&out).contains("rmse_deg=0.0000"));
}

#[test]
fn degenerate_k_fails_with_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let xyz = sphere_fixture(&data, 100, "2");
    let out = run(&[
        "--out-dir",
        tmp.path().join("o").to_str().unwrap(),
        "estimate",
        "--input",
        xyz.to_str().unwrap(),
        "--estimator",
        "pca",
        "--k",
        "2",
    ]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("points failed"), "stderr: {}", err);
    assert!(err.contains("degenerate patch"), "stderr: {}", err);
}

#[test]
fn estimate_refuses_to_overwrite_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let xyz = sphere_fixture(&data, 100, "2");
    let out = run(&[
        "--out-dir",
        data.to_str().unwrap(),
        "estimate",
        "--input",
        xyz.to_str().unwrap(),
        "--estimator",
        "pca",
        "--k",
        "8",
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("would overwrite the ground-truth normals"));
    // The ground truth survives.
    let text = fs::read_to_string(data.join("sphere.normals")).unwrap();
    assert_eq!(text.lines().count(), 100);
}

#[test]
fn tmhsa_without_checkpoint_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let xyz = sphere_fixture(&data, 100, "2");
    let out = run(&[
        "--out-dir",
        tmp.path().join("o").to_str().unwrap(),
        "estimate",
        "--input",
        xyz.to_str().unwrap(),
        "--estimator",
        "tmhsa",
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("requires --checkpoint"));
}

#[test]
fn train_attn_dump_and_tmhsa_estimate_work_together() {
    let tmp = tempfile::tempdir().unwrap();
    let trained = tmp.path().join("trained");
    let ckpt = tiny_train(&trained, "9", &[]);
    assert!(ckpt.exists());
    let curve = fs::read_to_string(trained.join("loss_curve.csv")).unwrap();
    assert!(curve.starts_with("epoch,loss\n"));
    assert_eq!(curve.lines().count(), 3, "header plus one line per epoch");

    let data = tmp.path().join("data");
    let xyz = sphere_fixture(&data, 400, "9");
    let attn = tmp.path().join("attn");
    run_ok(&[
        "--seed",
        "9",
        "--out-dir",
        attn.to_str().unwrap(),
        "attn-dump",
        "--input",
        xyz.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--num-patches",
        "3",
    ]);
    let pgm = fs::read_to_string(attn.join("attention.pgm")).unwrap();
    let mut lines = pgm.lines();
    assert_eq!(lines.next(), Some("P2"));
    assert_eq!(lines.next(), Some("10 3"), "k columns by num-patches rows");

    // Per-patch weights re-sum to 1.
    let pts = fs::read_to_string(attn.join("attention_points.csv")).unwrap();
    let mut sums: std::collections::BTreeMap<String, f64> = Default::default();
    for line in pts.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        *sums.entry(cols[0].to_string()).or_default() += cols[3].parse::<f64>().unwrap();
    }
    assert_eq!(sums.len(), 3);
    for (patch, s) in sums {
        assert!((s - 1.0).abs() < 1e-9, "patch {} sums to {}", patch, s);
    }

    let est = tmp.path().join("est");
    let out = run_ok(&[
        "--out-dir",
        est.to_str().unwrap(),
        "estimate",
        "--input",
        xyz.to_str().unwrap(),
        "--estimator",
        "tmhsa",
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert!(stdout(&out).contains("rmse_deg="));
    assert!(est.join("sphere.normals").exists());
}

#[test]
fn identical_seeds_reproduce_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tiny_train(&tmp.path().join("a"), "4", &[]);
    let b = tiny_train(&tmp.path().join("b"), "4", &[]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let data = tmp.path().join("data");
    let xyz = sphere_fixture(&data, 300, "4");
    for sub in ["e1", "e2"] {
        run_ok(&[
            "--seed",
            "4",
            "--out-dir",
            tmp.path().join(sub).to_str().unwrap(),
            "estimate",
            "--input",
            xyz.to_str().unwrap(),
            "--estimator",
            "pca",
            "--subsample",
            "50",
        ]);
    }
    assert_eq!(
        fs::read(tmp.path().join("e1/sphere.normals")).unwrap(),
        fs::read(tmp.path().join("e2/sphere.normals")).unwrap()
    );
    assert_eq!(
        fs::read(tmp.path().join("e1/sphere_indices.csv")).unwrap(),
        fs::read(tmp.path().join("e2/sphere_indices.csv")).unwrap()
    );
}

#[test]
fn sweep_dedups_ks_and_emits_plot_ready_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_ok(&[
        "--seed",
        "6",
        "--out-dir",
        tmp.path().join("s").to_str().unwrap(),
        "sweep-k",
        "--synthetic",
        "creases",
        "--shape-count",
        "2",
        "--points-per-shape",
        "500",
        "--samples-per-cloud",
        "40",
        "--ks",
        "8,6,8,12",
        "--estimators",
        "pca",
    ]);
    assert!(stderr(&out).contains("duplicate k values removed"));
    let csv = fs::read_to_string(tmp.path().join("s/sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k,estimator,rmse_deg,pgp5,pgp10"));
    let ks: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ks, ["6", "8", "12"]);
}

#[test]
fn icp_zero_perturbation_stops_immediately() {
    let tmp = tempfile::tempdir().unwrap();
    run_ok(&[
        "--seed",
        "8",
        "--out-dir",
        tmp.path().join("i").to_str().unwrap(),
        "icp",
        "--shape-count",
        "2",
        "--points-per-shape",
        "400",
        "--rot-deg",
        "0",
        "0",
        "0",
        "--trans",
        "0",
        "0",
        "0",
    ]);
    let csv = fs::read_to_string(tmp.path().join("i/icp_summary.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[2], "true", "row: {}", line);
        assert!(cols[3].parse::<usize>().unwrap() <= 1, "row: {}", line);
    }
}

#[test]
fn icp_rejects_zero_max_iterations_at_parse() {
    let out = run(&["icp", "--max-iterations", "0"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("invalid value '0'"));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let xyz = sphere_fixture(&data, 300, "2");
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, "[shared]\nk = 16\nestimator = \"jet\"\n").unwrap();

    let from_file = tmp.path().join("file");
    run_ok(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        from_file.to_str().unwrap(),
        "estimate",
        "--input",
        xyz.to_str().unwrap(),
    ]);
    let echo = fs::read_to_string(from_file.join("effective-config.toml")).unwrap();
    assert!(echo.contains("estimator = \"jet\""));
    assert!(echo.contains("k = 16"));

    let overridden = tmp.path().join("flag");
    run_ok(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        overridden.to_str().unwrap(),
        "estimate",
        "--input",
        xyz.to_str().unwrap(),
        "--k",
        "10",
        "--estimator",
        "pca",
    ]);
    let echo = fs::read_to_string(overridden.join("effective-config.toml")).unwrap();
    assert!(echo.contains("estimator = \"pca\""));
    assert!(echo.contains("k = 10"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, "[shared]\nbogus = 1\n").unwrap();
    let out = run(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        tmp.path().join("o").to_str().unwrap(),
        "synth",
        "--kind",
        "sphere",
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("unknown field `bogus`"));
}

#[test]
fn missing_input_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "--out-dir",
        tmp.path().join("o").to_str().unwrap(),
        "estimate",
        "--input",
        "/definitely/not/here.xyz",
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("/definitely/not/here.xyz"));
}

#[test]
fn eval_rejects_mismatched_lengths() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.normals");
    let b = tmp.path().join("b.normals");
    fs::write(&a, "1 0 0\n0 1 0\n").unwrap();
    fs::write(&b, "1 0 0\n").unwrap();
    let out = run(&[
        "--out-dir",
        tmp.path().join("o").to_str().unwrap(),
        "eval",
        "--pred",
        a.to_str().unwrap(),
        "--gt",
        b.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}
