//! End-to-end tests of the `jointlca` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn jointlca(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jointlca"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Writes a simulated dataset into `dir/name` and returns the view paths.
fn simulate(dir: &Path, name: &str, extra: &[&str]) -> Vec<String> {
    let mut args = vec!["simulate", "--out-dir", name, "--seed", "11"];
    args.extend_from_slice(extra);
    let out = jointlca(dir, &args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let views = extra
        .iter()
        .position(|a| *a == "--dims")
        .map_or(3, |p| extra[p + 1].split(',').count());
    (1..=views).map(|i| format!("{name}/view_{i}.csv")).collect()
}

fn with_views<'a>(mut args: Vec<&'a str>, views: &'a [String]) -> Vec<&'a str> {
    args.push("--views");
    args.extend(views.iter().map(String::as_str));
    args
}

const NOISELESS_R1: &[&str] = &[
    "--n", "30", "--dims", "6,5,7", "--r0", "1", "--case", "II", "--noiseless", "--orthogonal-individual",
];

#[test]
fn noiseless_rank_one_fixture_fits_rank_one() {
    let tmp = TempDir::new().unwrap();
    let views = simulate(tmp.path(), "data", NOISELESS_R1);
    let out = jointlca(tmp.path(), &with_views(vec!["fit", "--lambda", "0.5", "--out-dir", "fit"], &views));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("estimated rank: 1"), "{}", stdout(&out));
    for file in ["model.json", "trace.json"] {
        assert!(tmp.path().join("fit").join(file).exists(), "missing {file}");
    }

    let out = jointlca(
        tmp.path(),
        &with_views(vec!["scores", "--model", "fit/model.json", "--out-dir", "fit"], &views),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let scores = fs::read_to_string(tmp.path().join("fit/scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 30);
    assert!(scores.lines().all(|l| l.split(',').count() == 1));
}

#[test]
fn huge_lambda_fits_rank_zero_and_scores_refuse_it() {
    let tmp = TempDir::new().unwrap();
    let views = simulate(tmp.path(), "data", NOISELESS_R1);
    let out = jointlca(tmp.path(), &with_views(vec!["fit", "--lambda", "1e9", "--out-dir", "fit"], &views));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("estimated rank: 0"), "{}", stdout(&out));

    let out = jointlca(
        tmp.path(),
        &with_views(vec!["scores", "--model", "fit/model.json", "--out-dir", "fit"], &views),
    );
    assert_ne!(out.status.code(), Some(0));
    assert!(!tmp.path().join("fit/scores.csv").exists());
}

#[test]
fn row_mismatch_names_both_files() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("a.csv"), "1,2\n3,4\n5,6\n").unwrap();
    fs::write(tmp.path().join("b.csv"), "1,2,3\n4,5,6\n").unwrap();
    let out = jointlca(tmp.path(), &["fit", "--lambda", "0.1", "--views", "a.csv", "b.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("a.csv") && err.contains("b.csv"), "{err}");
}

#[test]
fn malformed_csv_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("a.csv"), "1,2\n3,x\n").unwrap();
    fs::write(tmp.path().join("b.csv"), "1,2\n3,4\n").unwrap();
    let out = jointlca(tmp.path(), &["fit", "--lambda", "0.1", "--views", "a.csv", "b.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("a.csv"), "{}", stderr(&out));
}

#[test]
fn more_folds_than_samples_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let views = simulate(tmp.path(), "data", &["--n", "8", "--dims", "4,4", "--r0", "1"]);
    let out = jointlca(tmp.path(), &with_views(vec!["select-rank", "--folds", "9"], &views));
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn select_rank_writes_cv_and_refit() {
    let tmp = TempDir::new().unwrap();
    let views = simulate(tmp.path(), "data", &["--n", "40", "--dims", "6,6,6", "--r0", "1", "--case", "II"]);
    let out = jointlca(
        tmp.path(),
        &with_views(vec!["select-rank", "--grid-size", "12", "--out-dir", "sel"], &views),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("selected rank:"));
    let cv: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("sel/cv.json")).unwrap()).unwrap();
    assert_eq!(cv["lambdas"].as_array().unwrap().len(), 12);
    assert!(tmp.path().join("sel/model_refit.json").exists());
}

#[test]
fn simulate_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let extra = ["--n", "20", "--dims", "5,6,4", "--r0", "2"];
    let first = simulate(tmp.path(), "one", &extra);
    let second = simulate(tmp.path(), "two", &extra);
    for (a, b) in first.iter().zip(&second) {
        let read = |p: &String| fs::read(tmp.path().join(p)).unwrap();
        assert_eq!(read(a), read(b));
    }
    let truth = |d: &str| fs::read_to_string(tmp.path().join(d).join("truth.json")).unwrap();
    assert_eq!(truth("one"), truth("two"));
}

#[test]
fn benchmark_outputs_and_rejects_zero_replications() {
    let tmp = TempDir::new().unwrap();
    let args = [
        "benchmark", "--n", "30", "--dims", "5,5,5", "--r0", "1", "--case", "II", "--grid-size", "8",
        "--replications", "2", "--out-dir", "bench",
    ];
    let out = jointlca(tmp.path(), &args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let results = fs::read_to_string(tmp.path().join("bench/benchmark_results.csv")).unwrap();
    assert_eq!(
        results.lines().next().unwrap(),
        "config_id,replication,seed,true_rank,estimated_rank,subspace_error,lambda,status"
    );
    assert_eq!(results.lines().count(), 3);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("bench/benchmark_summary.json")).unwrap()).unwrap();
    let acc = summary["cells"][0]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(tmp.path().join("bench/benchmark_timing.csv").exists());

    let out = jointlca(tmp.path(), &["benchmark", "--replications", "0", "--out-dir", "bench0"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn config_file_rejects_unknown_keys_and_supplies_values() {
    let tmp = TempDir::new().unwrap();
    let bad: PathBuf = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"lambda": 0.5, "lambdaa": 1.0}"#).unwrap();
    let out = jointlca(tmp.path(), &["--config", "bad.json", "oracle-check"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("lambdaa"), "{}", stderr(&out));

    let views = simulate(tmp.path(), "data", NOISELESS_R1);
    let good = serde_json::json!({ "lambda": 0.5, "views": views, "out_dir": "fromcfg" });
    fs::write(tmp.path().join("good.json"), good.to_string()).unwrap();
    let out = jointlca(tmp.path(), &["--config", "good.json", "fit"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("estimated rank: 1"));
    assert!(tmp.path().join("fromcfg/model.json").exists());
}

#[test]
fn bad_arguments_fail_cleanly() {
    let tmp = TempDir::new().unwrap();
    let out = jointlca(tmp.path(), &["simulate", "--case", "III"]);
    assert_eq!(out.status.code(), Some(2));
    let out = jointlca(tmp.path(), &["fit", "--views", "missing1.csv", "missing2.csv", "--lambda", "1"]);
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("missing1.csv"));
    let out = jointlca(tmp.path(), &["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_check_passes() {
    let tmp = TempDir::new().unwrap();
    let out = jointlca(tmp.path(), &["oracle-check", "--out-dir", "oracle"]);
    assert_eq!(out.status.code(), Some(0), "{}{}", stdout(&out), stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("oracle/oracle-report.json")).unwrap()).unwrap();
    assert!(report.as_array().unwrap().iter().all(|r| r["pass"] == true));
}
