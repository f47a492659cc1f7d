use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn obknn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obknn"))
        .args(args)
        .env_remove("OBKNN_THREADS")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = obknn(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_kind(out: &Output) -> String {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap();
    let v: Value = serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {line}"));
    v["error"]["kind"].as_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn three_points(dir: &Path) -> PathBuf {
    let input = dir.join("train.jsonl");
    std::fs::write(
        &input,
        r#"{"embedding": [0, 0], "label": "A"}
{"embedding": [3, 4], "label": "B"}
{"embedding": [6, 8], "label": "C"}
"#,
    )
    .unwrap();
    input
}

#[test]
fn build_then_query_stored_point() {
    let dir = tempfile::tempdir().unwrap();
    let input = three_points(dir.path());
    let store = dir.path().join("s.obkd");
    ok(&["build", "--input", s(&input), "--output", s(&store)]);
    for (point, label) in [("0,0", "A"), ("3,4", "B"), ("6,8", "C")] {
        let out = ok(&[
            "query",
            "--store",
            s(&store),
            "--embedding",
            point,
            "--base-dist",
            "1,0,0",
            "--lambda",
            "1",
            "--k",
            "1",
        ]);
        assert_eq!(out.trim(), label);
    }
}

#[test]
fn explain_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let input = three_points(dir.path());
    let store = dir.path().join("s.obkd");
    ok(&["build", "--input", s(&input), "--output", s(&store)]);
    let out = ok(&[
        "query",
        "--store",
        s(&store),
        "--embedding",
        "[1, 1]",
        "--base-dist",
        "0.2,0.3,0.5",
        "--lambda",
        "0.35",
        "--k",
        "3",
        "--temperature",
        "2",
        "--explain",
    ]);
    let v: Value = serde_json::from_str(&out).unwrap();
    let f = |k: &str| -> Vec<f64> {
        v[k].as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .collect()
    };
    let (knn, base, fin) = (f("p_knn"), f("p_base"), f("final"));
    let lambda = v["lambda"].as_f64().unwrap();
    for r in 0..3 {
        assert!((lambda * knn[r] + (1.0 - lambda) * base[r] - fin[r]).abs() <= 1e-12);
    }
    let ids: Vec<u64> = v["neighbors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|n| n["id"].as_u64().unwrap())
        .collect();
    assert_eq!(ids, vec![0, 1, 2]);
    assert_eq!(v["metric"], "euclidean");
    assert_eq!(v["temperature"], 2.0);
}

#[test]
fn mutate_add_edit_delete() {
    let dir = tempfile::tempdir().unwrap();
    let input = three_points(dir.path());
    let store = dir.path().join("s.obkd");
    ok(&["build", "--input", s(&input), "--output", s(&store)]);
    let q = |point: &str| {
        ok(&[
            "query",
            "--store",
            s(&store),
            "--embedding",
            point,
            "--base-dist",
            "1,0,0",
            "--lambda",
            "1",
            "--k",
            "1",
        ])
        .trim()
        .to_string()
    };
    let id = ok(&[
        "mutate",
        "--store",
        s(&store),
        "add",
        "--embedding",
        "-5,-5",
        "--label",
        "C",
    ]);
    assert_eq!(id.trim(), "3");
    assert_eq!(q("-5,-5"), "C");
    ok(&[
        "mutate",
        "--store",
        s(&store),
        "edit",
        "--id",
        "3",
        "--label",
        "B",
    ]);
    assert_eq!(q("-5,-5"), "B");
    ok(&["mutate", "--store", s(&store), "delete", "--id", "3"]);
    assert_eq!(q("-5,-5"), "A");
    let out = obknn(&["mutate", "--store", s(&store), "delete", "--id", "3"]);
    assert_eq!(error_kind(&out), "not_found");
    let out = obknn(&[
        "mutate",
        "--store",
        s(&store),
        "edit",
        "--id",
        "0",
        "--label",
        "Z",
    ]);
    assert_eq!(error_kind(&out), "invalid_label");
}

fn synth(dir: &Path) -> (PathBuf, PathBuf) {
    let out = dir.join("data");
    ok(&[
        "synth",
        "--out-dir",
        s(&out),
        "--per-label",
        "20",
        "--seed",
        "3",
    ]);
    (out.join("train.jsonl"), out.join("test.jsonl"))
}

#[test]
fn eval_lambda_zero_equals_base_only_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = synth(dir.path());
    let run = |extra: &[&str]| -> Value {
        let mut args = vec![
            "eval",
            "--train",
            s(&train),
            "--test",
            s(&test),
            "--shots",
            "4",
        ];
        args.extend_from_slice(extra);
        serde_json::from_str(&ok(&args)).unwrap()
    };
    let zero = run(&["--lambda", "0"]);
    let base = run(&["--retriever", "none"]);
    assert_eq!(zero["runs"].as_array().unwrap().len(), 5);
    for (a, b) in zero["runs"]
        .as_array()
        .unwrap()
        .iter()
        .zip(base["runs"].as_array().unwrap())
    {
        assert_eq!(a["f1"], b["f1"]);
    }
    let first = run(&["--seeds", "7,8"]);
    assert_eq!(first, run(&["--seeds", "7,8"]));
    assert_eq!(
        first["options"]["episodes"]["seeds"],
        serde_json::json!([7, 8])
    );
    let tfidf = run(&["--retriever", "tfidf", "--tfidf-mode", "replace"]);
    assert_eq!(tfidf["options"]["retriever"], "tfidf");
}

#[test]
fn sweep_default_grid() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = synth(dir.path());
    let csv = dir.path().join("sweep.csv");
    ok(&[
        "sweep",
        "--train",
        s(&train),
        "--test",
        s(&test),
        "--out",
        s(&csv),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<Vec<String>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert_eq!(rows.len(), 66);
    let mut lambdas: Vec<String> = rows.iter().map(|r| r[0].clone()).collect();
    lambdas.dedup();
    assert_eq!(
        lambdas,
        ["0", "0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9", "1"]
    );
    let ks: Vec<&str> = rows[..6].iter().map(|r| r[1].as_str()).collect();
    assert_eq!(ks, ["1", "2", "4", "8", "16", "32"]);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let input = three_points(dir.path());
    let store = dir.path().join("s.obkd");
    ok(&["build", "--input", s(&input), "--output", s(&store)]);
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        "k = 2\nlambda = 0.5\nmetric = \"squared_euclidean\"\n",
    )
    .unwrap();
    let out = obknn(&[
        "--config",
        s(&cfg),
        "query",
        "--store",
        s(&store),
        "--embedding",
        "0,0",
        "--base-dist",
        "1,0,0",
        "--k",
        "1",
    ]);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let echo: Value = serde_json::from_str(stderr.lines().next().unwrap()).unwrap();
    let inf = &echo["effective_config"]["inference"];
    assert_eq!(inf["k"], 1);
    assert_eq!(inf["lambda"], 0.5);
    assert_eq!(inf["metric"], "squared_euclidean");
    assert_eq!(inf["temperature"], 1.0);

    std::fs::write(&cfg, "bogus = 1\n").unwrap();
    let out = obknn(&[
        "--config",
        s(&cfg),
        "query",
        "--store",
        s(&store),
        "--embedding",
        "0,0",
        "--base-dist",
        "1,0,0",
    ]);
    assert_eq!(error_kind(&out), "invalid_config");
}

#[test]
fn failures_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.obkd");
    let out = obknn(&[
        "query",
        "--store",
        s(&missing),
        "--embedding",
        "0",
        "--base-dist",
        "1",
    ]);
    assert_eq!(error_kind(&out), "io");
    assert_eq!(error_kind(&obknn(&["frobnicate"])), "usage");

    let input = three_points(dir.path());
    let store = dir.path().join("s.obkd");
    ok(&["build", "--input", s(&input), "--output", s(&store)]);
    let out = obknn(&[
        "query",
        "--store",
        s(&store),
        "--embedding",
        "0,0,0",
        "--base-dist",
        "1,0,0",
    ]);
    assert_eq!(error_kind(&out), "dimension");
    let out = obknn(&[
        "query",
        "--store",
        s(&store),
        "--embedding",
        "0,0",
        "--base-dist",
        "0.5,0.5",
    ]);
    assert_eq!(error_kind(&out), "length_mismatch");
    let out = obknn(&[
        "query",
        "--store",
        s(&store),
        "--embedding",
        "0,0",
        "--base-dist",
        "1,0,0",
        "--lambda",
        "2",
    ]);
    assert_eq!(error_kind(&out), "invalid_config");

    let out = Command::new(env!("CARGO_BIN_EXE_obknn"))
        .args([
            "query",
            "--store",
            s(&store),
            "--embedding",
            "0,0",
            "--base-dist",
            "1,0,0",
        ])
        .env("OBKNN_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(error_kind(&out), "invalid_config");
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("b.csv");
    let out = Command::new(env!("CARGO_BIN_EXE_obknn"))
        .args([
            "bench",
            "--sizes",
            "0,50,100",
            "--dim",
            "8",
            "--queries",
            "3",
            "--rounds",
            "1",
            "--out",
            s(&csv),
        ])
        .env("OBKNN_THREADS", "1")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    let sizes: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(sizes, ["50", "100"]);
}
