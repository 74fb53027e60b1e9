use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dtbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtbench"))
        .args(args)
        .env_remove("DTBENCH_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const QUICK: &[&str] = &[
    "--set",
    "folds=2",
    "--set",
    "mcmc.restarts=2",
    "--set",
    "mcmc.burn_in=50",
    "--set",
    "mcmc.post_burn_in=50",
    "--set",
    "forest.trees=10",
];

#[test]
fn synth_writes_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dtbench(&["synth", "--error-samples", "10000", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("bayes_error"));
    let train = fs::read_to_string(dir.path().join("train.csv")).unwrap();
    assert_eq!(train.lines().count(), 251);
    assert_eq!(train.lines().next().unwrap(), "x1,x2,label");
}

#[test]
fn bench_synthetic_emits_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let mut args = vec!["bench", "synthetic", "--out", d];
    args.extend_from_slice(QUICK);
    let out = dtbench(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema_version"], 1);
    let ds = &summary["datasets"][0];
    for tech in ["bayes", "forest"] {
        let agg = &ds[tech]["aggregate"];
        let sum: f64 = ["cc_rate", "u_rate", "ci_rate"]
            .iter()
            .map(|k| agg[k]["mean"].as_f64().unwrap())
            .sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(agg["ci_rate"]["two_sigma"].as_f64().unwrap() >= 0.0);
        let sweep = fs::read_to_string(dir.path().join(format!("synthetic_{tech}_sweep.csv"))).unwrap();
        assert_eq!(sweep.lines().count(), 102);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    for a in manifest["artifacts"].as_array().unwrap() {
        assert!(dir.path().join(a.as_str().unwrap()).exists());
    }
}

#[test]
fn bench_reruns_are_byte_identical() {
    let run = |dir: &Path| {
        let mut args = vec!["bench", "synthetic", "--out", dir.to_str().unwrap()];
        args.extend_from_slice(QUICK);
        assert!(dtbench(&args).status.success());
        fs::read(dir.join("summary.json")).unwrap()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(run(a.path()), run(b.path()));
    for name in ["synthetic_bayes_votes_fold0.csv", "synthetic_forest_convergence_fold1.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
    }
}

#[test]
fn config_file_and_env_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "# quick run\ntechnique = forest\nfolds = 2\nforest.trees = 5\nsweep = false\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = Command::new(env!("CARGO_BIN_EXE_dtbench"))
        .args(["bench", "synthetic", "--config", cfg.to_str().unwrap()])
        .env("DTBENCH_OUT", &out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("synthetic_forest_folds.csv").exists());
    assert!(!out_dir.join("synthetic_bayes_folds.csv").exists());
    assert!(!out_dir.join("synthetic_forest_sweep.csv").exists());
}

#[test]
fn bayes_forest_envelope_sweep_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert!(dtbench(&["synth", "--error-samples", "10000", "--out", d]).status.success());
    let train = dir.path().join("train.csv");
    let test = dir.path().join("test.csv");
    let common = [
        "--train",
        train.to_str().unwrap(),
        "--test",
        test.to_str().unwrap(),
        "--out",
        d,
        "--set",
        "mcmc.restarts=2",
        "--set",
        "mcmc.burn_in=50",
        "--set",
        "mcmc.post_burn_in=50",
        "--set",
        "forest.trees=20",
    ];
    let mut args = vec!["bayes"];
    args.extend_from_slice(&common);
    let out = dtbench(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["bayes_votes.csv", "bayes_trace.csv", "bayes_paths.csv", "bayes_samples.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let mut args = vec!["forest"];
    args.extend_from_slice(&common);
    assert!(dtbench(&args).status.success());

    let votes = dir.path().join("forest_votes.csv");
    let out = dtbench(&["envelope", votes.to_str().unwrap(), "--gamma0", "0.95"]);
    assert!(out.status.success());
    let rep: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(rep["gamma0"], 0.95);

    let bvotes = dir.path().join("bayes_votes.csv");
    let out = dtbench(&["sweep", votes.to_str().unwrap(), bvotes.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).lines().count(), 102);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    // unknown configuration key
    assert_eq!(dtbench(&["bench", "synthetic", "--out", d, "--set", "nope=1"]).status.code(), Some(2));
    // gamma0 outside (1/C, 1]
    assert_eq!(dtbench(&["bench", "synthetic", "--out", d, "--set", "gamma0=1.5"]).status.code(), Some(2));
    // usage error
    assert_eq!(dtbench(&["frobnicate"]).status.code(), Some(2));
    // missing data file
    let missing = dir.path().join("missing.csv");
    let m = missing.to_str().unwrap();
    assert_eq!(dtbench(&["forest", "--train", m, "--test", m, "--out", d]).status.code(), Some(3));
    // malformed vote matrix
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "target,vote_0,vote_1\n0,x,1\n").unwrap();
    assert_eq!(dtbench(&["envelope", bad.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn uci_skips_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = dtbench(&["bench", "uci", "--data-dir", d, "--out", d]);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.matches("notice: skipped").count(), 7);
}
