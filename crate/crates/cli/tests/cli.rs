use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"{"mesh": 8, "n_samples": 3, "persist_samples": true,
  "spread": {"pool_size": 6, "group_sizes": [2, 4], "n_groups": 3}}"#;

fn run(cmd: &str, config: &str, seed: u64, out: &Path, extra: &[&str]) -> Output {
    let dir = out.parent().unwrap();
    let cfg = dir.join(format!("{}.json", out.file_name().unwrap().to_string_lossy()));
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_hdsa-lab"))
        .args([cmd, "--config", cfg.to_str().unwrap(), "--seed", &seed.to_string(), "--out", out.to_str().unwrap()])
        .args(extra)
        .output()
        .unwrap()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn hdsa_emits_thirteen_indices_per_qoi() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = run("hdsa", SMALL, 5, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(out.join("sensitivities.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        ["qoi", "subgroup", "member", "pointwise_raw", "pointwise_norm", "generalized_raw", "generalized_norm", "n_s", "seed"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    for qoi in ["map", "risk"] {
        let mut groups: Vec<&str> = rows.iter().filter(|r| &r[0] == qoi).map(|r| r.get(1).unwrap()).collect();
        groups.dedup();
        assert_eq!(groups.len(), 13, "{qoi}");
        assert_eq!(rows.iter().filter(|r| &r[0] == qoi).count(), 37);
    }
    for r in &rows {
        assert!(r[3].parse::<f64>().unwrap() >= 0.0);
        assert_eq!(&r[7], "3");
        assert_eq!(&r[8], "5");
    }
}

#[test]
fn same_seed_gives_identical_files_for_any_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    for cmd in ["synthesize", "map", "hdsa", "oracle", "spread"] {
        let a = tmp.path().join(format!("{cmd}-a"));
        let b = tmp.path().join(format!("{cmd}-b"));
        assert!(run(cmd, SMALL, 11, &a, &["--workers", "1"]).status.success(), "{cmd}");
        assert!(run(cmd, SMALL, 11, &b, &["--workers", "3"]).status.success(), "{cmd}");
        let (fa, fb) = (files(&a), files(&b));
        assert_eq!(fa.len(), fb.len());
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(x.file_name(), y.file_name());
            assert!(fs::read(x).unwrap() == fs::read(y).unwrap(), "{cmd}: {} differs", x.display());
        }
    }
    let c = tmp.path().join("hdsa-c");
    assert!(run("hdsa", SMALL, 12, &c, &[]).status.success());
    assert_ne!(fs::read(c.join("sensitivities.csv")).unwrap(), fs::read(tmp.path().join("hdsa-a/sensitivities.csv")).unwrap());
}

#[test]
fn ledger_rows_follow_cost_formulas() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert!(run("hdsa", SMALL, 3, &out, &[]).status.success());
    let ledger = json(&out.join("ledger.json"));
    let mut total = 0;
    for row in ledger["per_sample"].as_array().unwrap() {
        let (r, e) = (&row["recorded"], &row["expected"]);
        let steps = row["newton_steps"].as_u64().unwrap();
        let cg = row["cg_iterations"].as_u64().unwrap();
        assert_eq!(r["data_generation"], 1);
        assert_eq!(e["inverse_solve"].as_u64().unwrap(), 2 * steps + 2 * cg);
        assert_eq!(r["inverse_solve"].as_u64().unwrap(), 2 * steps + 2 * cg + 2 + row["backtracks"].as_u64().unwrap());
        assert_eq!(r["lowrank_build"].as_u64().unwrap() + 2, e["lowrank_build"].as_u64().unwrap());
        assert_eq!(r["risk_sensitivity"], 2);
        assert_eq!(r["map_sensitivity"], 74);
        let sum: u64 = ["data_generation", "inverse_solve", "lowrank_build", "risk_sensitivity", "map_sensitivity"]
            .iter()
            .map(|k| r[*k].as_u64().unwrap())
            .sum();
        assert_eq!(row["total"].as_u64().unwrap(), sum);
        total += sum;
    }
    assert_eq!(ledger["total_solves"].as_u64().unwrap(), total);
}

#[test]
fn sample_arrays_match_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert!(run("synthesize", SMALL, 2, &out, &[]).status.success());
    let manifest = json(&out.join("samples/manifest.json"));
    assert_eq!(manifest["meta"]["n_nodes"], 81);
    for a in manifest["arrays"].as_array().unwrap() {
        let shape: Vec<u64> = a["shape"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
        let bytes = fs::read(out.join("samples").join(a["file"].as_str().unwrap())).unwrap();
        assert_eq!(bytes.len() as u64, 8 * shape[0] * shape[1]);
        assert_eq!(shape[0], 3);
    }
    let ledger = json(&out.join("ledger.json"));
    assert_eq!(ledger["total_solves"], 3);
}

#[test]
fn failures_write_error_record_and_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bad");
    let o = run("hdsa", r#"{"noise_std": -0.1}"#, 1, &out, &[]);
    assert!(!o.status.success());
    let rec = json(&out.join("error.json"));
    assert_eq!(rec["kind"], "config");
    assert!(rec["error"].as_str().unwrap().contains("noise_std"));

    let out = tmp.path().join("typo");
    let o = run("map", "{\n  \"mesh\": 8,\n  \"n_sample\": 2\n}", 1, &out, &[]);
    assert!(!o.status.success());
    let msg = json(&out.join("error.json"))["error"].as_str().unwrap().to_string();
    assert!(msg.contains("line 3"), "{msg}");

    // A later successful run clears the stale record.
    assert!(run("oracle", "{}", 1, &out, &[]).status.success());
    assert!(!out.join("error.json").exists());
}

#[test]
fn log_level_follows_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"mesh": 4, "n_samples": 1}"#).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_hdsa-lab"))
        .args(["map", "--config", cfg.to_str().unwrap(), "--seed", "1", "--out", tmp.path().join("o").to_str().unwrap()])
        .env("HDSA_LOG", "info")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Newton steps"));
}
