use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clusterloc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
    stdout(&o)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthetic train/test CSVs in UJIIndoorLoc layout.
fn synth(dir: &Path) -> (String, String) {
    let out = dir.join("data");
    let text = ok(&["synth", "--seed", "3", "--out", p(&out)]);
    assert!(text.starts_with("APs: 60, train: "), "{text}");
    (p(&out.join("train.csv")).to_string(), p(&out.join("test.csv")).to_string())
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Estimates of every sample, ignoring wall-clock fields.
fn estimates(report: &Value) -> Vec<(String, String, i64)> {
    report["samples"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| (s["est_x"].to_string(), s["est_y"].to_string(), s["est_floor"].as_i64().unwrap()))
        .collect()
}

#[test]
fn ingest_prints_shape_and_writes_canonical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = synth(dir.path());
    let out = dir.path().join("ingested");
    let text = ok(&["ingest", "--dataset", &train, "--test", &test, "--out", p(&out)]);
    let first = text.lines().next().unwrap();
    assert!(first.starts_with("APs: 60, train: ") && first.ends_with(", test: 200"), "{text}");
    assert!(text.contains("global_min: "));
    assert_eq!(
        std::fs::read_to_string(out.join("train.csv")).unwrap(),
        std::fs::read_to_string(&train).unwrap()
    );
}

#[test]
fn toy_csv_shape() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("toy.csv");
    std::fs::write(&csv, "AP1,AP2,X,Y,FLOOR\n-40,100,0,0,0\n-50,-60,1,1,1\n-70,-80,2,2,1\n").unwrap();
    let text = ok(&["ingest", "--schema", "tut-generic", "--dataset", p(&csv), "--out", p(&dir.path().join("o"))]);
    assert!(text.starts_with("APs: 2, train: 3, test: 0"), "{text}");
    assert!(text.contains("global_min: -81 dBm"), "{text}");
}

#[test]
fn missing_file_is_a_data_error_naming_the_path() {
    let o = run(&["ingest", "--dataset", "/nowhere/train.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nowhere/train.csv"), "{}", stderr(&o));
}

#[test]
fn usage_and_config_errors_exit_1() {
    assert_eq!(run(&["evaluate", "--level", "roof"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["fit", "--knn-k", "1,3"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "levle = \"floor\"\n").unwrap();
    let o = run(&["fit", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("levle"), "{}", stderr(&o));
}

#[test]
fn infeasible_k_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = synth(dir.path());
    let o = run(&["fit", "--dataset", &train, "--k-clusters", "100000", "--out", p(&dir.path().join("f"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn k1_bundle_evaluates_like_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = synth(dir.path());
    let fit_dir = dir.path().join("fit");
    let text = ok(&["fit", "--dataset", &train, "--k-clusters", "1", "--space", "xyz", "--n-aps", "3", "--out", p(&fit_dir)]);
    assert!(text.contains("creation time: "), "{text}");

    let bundle = fit_dir.join("bundle.json");
    let with_bundle = dir.path().join("eval-bundle");
    let base = dir.path().join("eval-base");
    let common = ["--dataset", &train, "--test", &test, "--knn-k", "5", "--variant", "wknn"];
    let mut args = vec!["evaluate", "--bundle", p(&bundle), "--out", p(&with_bundle)];
    args.extend(common);
    ok(&args);
    let mut args = vec!["evaluate", "--out", p(&base)];
    args.extend(common);
    ok(&args);

    let (a, b) = (json(&with_bundle.join("report.json")), json(&base.join("report.json")));
    assert_eq!(a["config"]["mode"], "clustered");
    assert_eq!(b["config"]["mode"], "baseline");
    assert_eq!(estimates(&a), estimates(&b));
    assert_eq!(a["e2d"], b["e2d"]);
    assert_eq!(a["fdr"], b["fdr"]);
    for f in ["samples.csv", "cdf.svg", "config.toml"] {
        assert!(with_bundle.join(f).exists(), "{f}");
    }
}

#[test]
fn fit_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (train, _) = synth(dir.path());
    let bundle = |name: &str| {
        let out = dir.path().join(name);
        ok(&["fit", "--dataset", &train, "--k-clusters", "3", "--seed", "9", "--out", p(&out)]);
        let mut b = json(&out.join("bundle.json"));
        b["config"]["out"] = Value::Null;
        b["model"]["creation_time_ms"] = Value::Null;
        (b["model"].clone(), b["table"]["rows"].clone(), b["config"].clone())
    };
    assert_eq!(bundle("a"), bundle("b"));
}

#[test]
fn config_snapshot_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = synth(dir.path());
    let first = dir.path().join("first");
    ok(&[
        "evaluate", "--dataset", &train, "--test", &test, "--k-clusters", "3", "--level", "floor",
        "--n-aps", "2", "--knn-k", "3", "--seed", "5", "--out", p(&first),
    ]);
    let second = dir.path().join("second");
    ok(&["evaluate", "--config", p(&first.join("config.toml")), "--out", p(&second)]);
    let (a, b) = (json(&first.join("report.json")), json(&second.join("report.json")));
    assert_eq!(estimates(&a), estimates(&b));
    assert_eq!(a["config"], b["config"]);
}

#[test]
fn sweep_writes_summary_rows_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = synth(dir.path());
    let out = dir.path().join("sweep");
    let text = ok(&[
        "sweep", "--dataset", &train, "--test", &test, "--level", "building", "--space", "rssi",
        "--k-clusters", "2,3", "--n-aps", "1,2", "--knn-k", "3", "--variant", "wknn-t", "--jobs", "2",
        "--out", p(&out),
    ]);
    assert!(text.contains("cells: 5, evaluated: 5, skipped: 0"), "{text}");
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), "level,approach,variant,k,e2D_cf,p50|cf,p95|cf,e2D,p50,p95,FDR,N,K");
    assert_eq!(summary.lines().count(), 3);
    assert_eq!(std::fs::read_to_string(out.join("rows.csv")).unwrap().lines().count(), 6);
    assert_eq!(json(&out.join("sweep.json"))["entries"].as_array().unwrap().len(), 5);
    assert!(out.join("cdf.svg").exists());
}

#[test]
fn single_cell_sweep_matches_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = synth(dir.path());
    let args = |cmd: &'static str, out: &Path| -> Vec<String> {
        [
            cmd, "--dataset", &train, "--test", &test, "--level", "floor", "--space", "xyz", "--k-clusters", "2",
            "--n-aps", "3", "--knn-k", "5", "--variant", "knn", "--seed", "4", "--out", p(out),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    };
    let sweep_out = dir.path().join("s");
    let mut a = args("sweep", &sweep_out);
    a.push("--no-baseline".into());
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let eval_out = dir.path().join("e");
    ok(&args("evaluate", &eval_out).iter().map(String::as_str).collect::<Vec<_>>());

    let s = json(&sweep_out.join("sweep.json"));
    let entries = s["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 1);
    let from_sweep = &entries[0]["outcome"]["report"];
    let direct = json(&eval_out.join("report.json"));
    assert_eq!(estimates(from_sweep), estimates(&direct));
    assert_eq!(from_sweep["e2d"], direct["e2d"]);
}
