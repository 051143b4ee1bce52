use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use climb_core::recmodel::ingest_interactions;
use climb_core::{CoocModel, ScoringModel, SparseBinary};
use serde_json::Value;

fn climb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_climb")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = climb(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small dataset plus trained model in a temp dir.
fn fixture() -> (tempfile::TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let model = dir.path().join("model.json");
    ok(&["gen-data", "--users", "48", "--items", "160", "--mean-basket", "8", "--seed", "3", "--out", s(&data)]);
    ok(&["train", "--data", s(&data), "--out", s(&model)]);
    (dir, data, model)
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["gen-data", "--users", "32", "--items", "64", "--seed", "5", "--out", s(&a)]);
    ok(&["gen-data", "--users", "32", "--items", "64", "--seed", "5", "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let text = fs::read_to_string(&a).unwrap();
    assert!(text.starts_with("# manifest: "));
    let (ds, _) = ingest_interactions(&a, 4.0).unwrap();
    assert_eq!(ds.user_count(), 32);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(climb(&["gen-data"]).status.code(), Some(2)); // missing --out
    assert_eq!(climb(&["gen-data", "--users", "x", "--out", "/tmp/never.csv"]).status.code(), Some(2));
    assert_eq!(climb(&["gen-data", "--users", "3", "--out", "/tmp/never.csv"]).status.code(), Some(2));
    assert_eq!(climb(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = climb(&["train", "--data", s(&missing), "--out", s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn train_round_trip_is_bit_exact() {
    let (_dir, data, model) = fixture();
    let loaded = CoocModel::load(&model).unwrap();
    let (ds, _) = ingest_interactions(&data, 4.0).unwrap();
    let fitted = climb_core::recmodel::fit_cooc(&ds, Default::default()).unwrap();
    for (i, u) in ds.users().iter().take(10).enumerate() {
        let x = u.to_vector(ds.item_count());
        assert_eq!(loaded.score(&x).unwrap(), fitted.score(&x).unwrap(), "probe {i}");
    }
    assert_eq!(loaded.score(&SparseBinary::zeros(ds.item_count())).unwrap().len(), ds.item_count());
    let doc: Value = serde_json::from_slice(&fs::read(&model).unwrap()).unwrap();
    assert_eq!(doc["manifest"]["command"], "train");
}

#[test]
fn explain_all_emits_three_objects_deterministically() {
    let (_dir, data, model) = fixture();
    let (ds, _) = ingest_interactions(&data, 4.0).unwrap();
    let user = ds.users().iter().find(|u| u.d_prime() >= 4).unwrap().user_id().to_owned();
    let args =
        ["explain", "--model", s(&model), "--data", s(&data), "--user", &user, "--samples", "400", "--seed", "9"];
    let a = ok(&args);
    let b = ok(&args);
    assert_eq!(a.stdout, b.stdout);
    let lines: Vec<Value> =
        String::from_utf8(a.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    let methods: Vec<&str> = lines.iter().map(|v| v["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["lime", "shap", "climb"]);
    for v in &lines[1..] {
        assert!(v["completeness_residual"].as_f64().unwrap().abs() <= 1e-8);
    }
    assert_eq!(lines[0]["manifest"]["master_seed"], 9);

    let one = ok(&[
        "explain",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--user",
        &user,
        "--method",
        "climb",
        "--samples",
        "400",
        "--seed",
        "9",
    ]);
    let v: Value = serde_json::from_slice(&one.stdout).unwrap();
    assert_eq!(v["items"], lines[2]["items"]);

    let unknown = climb(&["explain", "--model", s(&model), "--data", s(&data), "--user", "nobody"]);
    assert_eq!(unknown.status.code(), Some(1));
    let bad_item = climb(&["explain", "--model", s(&model), "--data", s(&data), "--user", &user, "--target", "zzz"]);
    assert_eq!(bad_item.status.code(), Some(1));
    let bad_method = climb(&["explain", "--model", s(&model), "--data", s(&data), "--user", &user, "--method", "x"]);
    assert_eq!(bad_method.status.code(), Some(2));
}

fn data_rows(p: &Path) -> Vec<String> {
    fs::read_to_string(p).unwrap().lines().filter(|l| !l.starts_with('#')).map(str::to_owned).collect()
}

#[test]
fn evaluate_writes_reports_and_honours_overrides() {
    let (dir, data, model) = fixture();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"samples": 150, "P": 4, "ks": [1, 2, 4], "timing_users": 2, "seed": 5}"#).unwrap();
    let out = dir.path().join("out");
    ok(&[
        "evaluate",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--out-dir",
        s(&out),
        "--rho",
        "0.2",
    ]);
    let report: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let echoed = &report["manifest"]["config"]["evaluation"];
    assert_eq!(echoed["samples"], 150);
    assert_eq!(echoed["bootstraps"], 4);
    assert_eq!(echoed["rho"], 0.2);
    assert_eq!(report["counts"]["failures"], 0);

    let dr = data_rows(&out.join("delta_rank.csv"));
    assert_eq!(dr[0], "method,sparsity_rank,k,mean,median,std,n");
    assert_eq!(dr.len(), 1 + 4 * 8 * 3); // three methods plus random arm
    assert_eq!(
        data_rows(&out.join("bias_variance.csv"))[0],
        "method,sparsity_rank,bias_sq_mean,variance_mean,mse_mean,n"
    );
    let timing = data_rows(&out.join("timing.csv"));
    assert_eq!(timing[0], "method,phase,median_ms,mean_ms,n");
    assert_eq!(timing.len(), 1 + 3 * 4);
    let header = fs::read_to_string(out.join("delta_rank.csv")).unwrap();
    assert!(header.starts_with("# delta_rank = rank_before - rank_after"));
}

#[test]
fn evaluate_rejects_bad_config() {
    let (dir, data, model) = fixture();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"samples": 10, "bogus": 1}"#).unwrap();
    let out = dir.path().join("out");
    let r = climb(&["evaluate", "--model", s(&model), "--data", s(&data), "--config", s(&cfg), "--out-dir", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    fs::write(&cfg, r#"{"rho": 1.5}"#).unwrap();
    let r = climb(&["evaluate", "--model", s(&model), "--data", s(&data), "--config", s(&cfg), "--out-dir", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn evaluate_with_no_methods_writes_header_only_csvs() {
    let (dir, data, model) = fixture();
    let out = dir.path().join("out");
    ok(&["evaluate", "--model", s(&model), "--data", s(&data), "--out-dir", s(&out), "--methods", ""]);
    for f in ["delta_rank.csv", "bias_variance.csv", "timing.csv"] {
        assert_eq!(data_rows(&out.join(f)).len(), 1, "{f}");
    }
}

#[test]
fn bench_reports_phases_and_enforces_reps() {
    let (_dir, data, model) = fixture();
    let out = ok(&[
        "bench",
        "--model",
        s(&model),
        "--data",
        s(&data),
        "--n-users",
        "3",
        "--samples",
        "200",
        "--reps",
        "3",
        "--min-items",
        "4",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "method,phase,median_ms,mean_ms,n");
    for phase in ["sampling", "labeling", "solving", "total"] {
        assert!(rows.iter().any(|r| r.starts_with(&format!("climb,{phase},"))));
    }
    assert!(String::from_utf8_lossy(&out.stderr).contains("CLIMB/LIME median solving time ratio"));
    let r = climb(&["bench", "--model", s(&model), "--data", s(&data), "--reps", "2"]);
    assert_eq!(r.status.code(), Some(2));
}
