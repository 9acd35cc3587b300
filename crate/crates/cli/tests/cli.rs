use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const CONJUNCTION: &str = r#"{
  "num_classes": 1,
  "objective": "binary_raw",
  "features": [{"name": "f0"}, {"name": "f1"}],
  "trees": [
    {"class_index": 0, "root": 0, "nodes": [
      {"id": 0, "kind": "split", "feature": 0, "threshold": 0.5, "left": 1, "right": 2},
      {"id": 1, "kind": "leaf", "value": -1.0},
      {"id": 2, "kind": "split", "feature": 1, "threshold": 0.5, "left": 3, "right": 4},
      {"id": 3, "kind": "leaf", "value": -1.0},
      {"id": 4, "kind": "leaf", "value": 1.0}
    ]}
  ]
}"#;

fn fixture(name: &str) -> &'static str {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name);
    Box::leak(path.into_os_string().into_string().unwrap().into_boxed_str())
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gbexplain"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p<P: AsRef<Path> + ?Sized>(path: &P) -> &str {
    path.as_ref().to_str().unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn encode_reports_counts() {
    let toy = fixture("toy2f.json");
    let stats: serde_json::Value =
        serde_json::from_str(&ok(&["encode", "--model", p(&toy), "--format", "json"])).unwrap();
    assert_eq!(stats["atoms"], 8);
    assert_eq!(stats["threshold_atoms"], 3);
    assert_eq!(stats["paths"], 5);

    let dir = TempDir::new().unwrap();
    let constant = write(
        &dir,
        "constant.json",
        r#"{"num_classes": 1, "objective": "binary_raw", "features": [{"name": "a"}],
            "trees": [{"class_index": 0, "root": 0, "nodes": [{"id": 0, "kind": "leaf", "value": 0.5}]}]}"#,
    );
    let out = dir.path().join("enc");
    ok(&["encode", "--model", p(&constant), "--format", "json", "--out", p(&out)]);
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["threshold_atoms"], 0);
    assert!(fs::read_to_string(out.join("model.cnf")).unwrap().contains("p cnf"));
}

#[test]
fn dimacs_export_names_atoms() {
    let dir = TempDir::new().unwrap();
    ok(&["encode", "--model", fixture("toy2f.json"), "--format", "json", "--out", p(dir.path())]);
    let cnf = fs::read_to_string(dir.path().join("model.cnf")).unwrap();
    assert!(cnf.starts_with("c 1 f0 <= 0.5\n"));
}

#[test]
fn explain_toy_rows() {
    let args = [
        "explain",
        "--model",
        fixture("toy2f.json"),
        "--format",
        "json",
        "--data",
        fixture("toy2f.csv"),
    ];
    let text = ok(&args);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(
        lines[0],
        r#"{"instance":0,"class":1,"kept":[{"feature":"f0","value":1.0}],"free":["f1"]}"#
    );
    assert_eq!(ok(&args), text);

    let mut one = args.to_vec();
    one.extend(["--instances", "2"]);
    assert_eq!(ok(&one).lines().count(), 1);
}

#[test]
fn explain_output_does_not_depend_on_jobs() {
    let base = [
        "explain",
        "--model",
        fixture("desk_model.txt"),
        "--data",
        fixture("desk_test.csv"),
        "--instances",
        "0-59",
    ];
    let serial = ok(&[&base[..], &["--jobs", "1"]].concat());
    let parallel = ok(&[&base[..], &["--jobs", "4"]].concat());
    assert_eq!(serial, parallel);
    assert_eq!(serial.lines().count(), 60);
}

#[test]
fn exit_codes() {
    let missing = run(&["encode", "--model", "/nonexistent/model.txt"]);
    assert_eq!(missing.status.code(), Some(2));

    let out_of_range = run(&[
        "explain",
        "--model",
        fixture("toy2f.json"),
        "--format",
        "json",
        "--data",
        fixture("toy2f.csv"),
        "--instances",
        "3",
    ]);
    assert_eq!(out_of_range.status.code(), Some(2));

    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(fixture("desk_model.txt")).unwrap().replacen("num_cat=0", "num_cat=1", 1);
    let categorical = write(&dir, "cat.txt", &text);
    let unsupported = run(&["encode", "--model", p(&categorical)]);
    assert_eq!(unsupported.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unsupported.stderr).contains("categorical"));

    let bad_flag = run(&["encode", "--model", fixture("toy2f.json"), "--format", "xml"]);
    assert_eq!(bad_flag.status.code(), Some(2));
}

#[test]
fn class_explain_artifact() {
    let dir = TempDir::new().unwrap();
    let args = [
        "class-explain",
        "--model",
        fixture("toy2f.json"),
        "--format",
        "json",
        "--data",
        fixture("toy2f.csv"),
    ];
    let text = ok(&args);
    let records: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(records[0]["population"], 2);
    assert_eq!(records[1]["features"][0]["name"], "f0");
    assert_eq!(records[1]["features"][0]["a"], 1.0);
    assert_eq!(ok(&args), text);

    // every row predicted class 1: class 0 stays empty
    let single = write(&dir, "single.csv", "f0,f1\n1.0,3.0\n1.2,3.0\n");
    let out = run(&[
        "class-explain",
        "--model",
        fixture("toy2f.json"),
        "--format",
        "json",
        "--data",
        p(&single),
    ]);
    assert!(out.status.success());
    let records: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(records[0]["features"].as_array().unwrap().len(), 0);
    assert_eq!(records[1]["population"], 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("class 0 has no explained instances"));
}

#[test]
fn interval_attack_on_conjunction() {
    let dir = TempDir::new().unwrap();
    let model = write(&dir, "conj.json", CONJUNCTION);
    let data = write(&dir, "x.csv", "f0,f1\n1.0,1.0\n0.0,0.0\n");
    let classes = write(
        &dir,
        "classes.json",
        r#"[{"class": 0, "population": 1, "features": [{"name": "f0", "a": 0.0, "b": 0.3, "support": 1, "frequency": 1.0}]},
            {"class": 1, "population": 1, "features": [{"name": "f0", "a": 0.9, "b": 1.1, "support": 1, "frequency": 1.0},
                                                       {"name": "f1", "a": 0.9, "b": 1.1, "support": 1, "frequency": 1.0}]}]"#,
    );
    let out = dir.path().join("gen");
    ok(&[
        "adv", "gen", "--model", p(&model), "--format", "json", "--data", p(&data), "--class-expl", p(&classes),
        "--out", p(&out),
    ]);
    let mut rdr = csv::Reader::from_path(out.join("adversarial.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    // row 1 (class 0) keeps f0 = 0 which lies outside class 1's f0 interval: moved to 0.9, still class 0
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][0], "0");
    assert_eq!(&rows[0][2], "0");
    assert!((rows[0][4].parse::<f64>().unwrap() - 0.7).abs() < 1e-12);
    assert_eq!(&rows[0][5], "f0");
    assert_eq!(&rows[0][8], "0.3");
    let perturbed = fs::read_to_string(out.join("perturbed.csv")).unwrap();
    assert_eq!(perturbed, "f0,f1\n0.3,1\n");
}

#[test]
fn detect_rows_inside_their_intervals_score_zero() {
    let dir = TempDir::new().unwrap();
    let model = write(&dir, "conj.json", CONJUNCTION);
    let data = write(&dir, "x.csv", "f0,f1\n1.0,1.0\n1.05,0.95\n");
    let classes = write(
        &dir,
        "classes.json",
        r#"[{"class": 1, "population": 2, "features": [{"name": "f0", "a": 0.9, "b": 1.1, "support": 2, "frequency": 1.0},
                                                       {"name": "f1", "a": 0.9, "b": 1.1, "support": 2, "frequency": 1.0}]}]"#,
    );
    let text = ok(&[
        "adv", "detect", "--model", p(&model), "--format", "json", "--data", p(&data), "--class-expl", p(&classes),
    ]);
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    for row in rdr.records() {
        let row = row.unwrap();
        assert_eq!(&row[2], "0");
        assert_eq!(&row[5], "false");
    }
    let missing = run(&[
        "adv", "detect", "--model", p(&model), "--format", "json", "--data", p(&data), "--class-expl", "/nope.json",
    ]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn eval_summary_matches_samples() {
    let dir = TempDir::new().unwrap();
    let model = fixture("desk_model.txt");
    let ce = dir.path().join("ce");
    ok(&["class-explain", "--model", p(&model), "--data", fixture("desk_train.csv"), "--out", p(&ce)]);
    let ev = dir.path().join("eval");
    ok(&[
        "adv",
        "eval",
        "--model",
        p(&model),
        "--data",
        fixture("desk_test.csv"),
        "--class-expl",
        p(&ce.join("class_explanations.json")),
        "--out",
        p(&ev),
    ]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    let mut rdr = csv::Reader::from_path(ev.join("samples.csv")).unwrap();
    let header = rdr.headers().unwrap().clone();
    let nf = (header.len() - 8) / 2;
    let mut norms = Vec::new();
    for row in rdr.records() {
        let row = row.unwrap();
        if &row[2] != "true" {
            continue;
        }
        let orig: Vec<f64> = (0..nf).map(|i| row[8 + i].parse().unwrap()).collect();
        let adv: Vec<f64> = (0..nf).map(|i| row[8 + nf + i].parse().unwrap()).collect();
        norms.push(orig.iter().zip(&adv).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
    }
    assert_eq!(report["fooled"].as_u64().unwrap() as usize, norms.len());
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    assert!((report["mean_l2"].as_f64().unwrap() - mean).abs() < 1e-12);
}

#[test]
fn metrics_against_formal_rankings() {
    let dir = TempDir::new().unwrap();
    let model = fixture("toy2f.json");
    let data = fixture("toy2f.csv");
    // formal ranks: row 0 keeps f0 -> (1, 2); row 1 keeps f0 -> (1, 2)
    let same = write(&dir, "same.csv", "instance,f0,f1\n0,1,2\n1,1,2\n");
    let text = ok(&["metrics", "--model", p(&model), "--format", "json", "--data", p(&data), "--rankings", p(&same)]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "instance,spearman,kendall_tau,rbo");
    assert_eq!(lines[1], "0,1,1,1");
    assert_eq!(lines[2], "1,1,1,1");
    assert_eq!(lines[3], "min,1,1,1");

    let reversed = write(&dir, "rev.json", r#"[{"instance": 0, "order": ["f1", "f0"]}]"#);
    let out = dir.path().join("m");
    ok(&[
        "metrics", "--model", p(&model), "--format", "json", "--data", p(&data), "--rankings", p(&reversed), "--out",
        p(&out),
    ]);
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("0,-1,-1,"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["consistency"], 1.0);

    let misaligned = write(&dir, "bad.csv", "instance,f0,f1\n7,1,2\n");
    let bad = run(&["metrics", "--model", p(&model), "--format", "json", "--data", p(&data), "--rankings", p(&misaligned)]);
    assert_eq!(bad.status.code(), Some(1));
}
