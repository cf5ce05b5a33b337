use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cloudlb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cloudlb")).args(args).output().unwrap()
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn small_config(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(shipped("default.toml"))
        .unwrap()
        .replace("duration_hours = 24", "duration_hours = 1");
    let path = dir.join("small.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn default_config_matches_shipped_file() {
    let out = cloudlb(&["default-config"]);
    assert!(out.status.success());
    assert_eq!(out.stdout, std::fs::read(shipped("default.toml")).unwrap());
    let out = cloudlb(&["default-config", "--overload"]);
    assert_eq!(out.stdout, std::fs::read(shipped("overload.toml")).unwrap());
}

#[test]
fn avail_prints_value_and_verdict() {
    let out = cloudlb(&["avail", "--mp", "60", "--rl", "1", "--de", "1", "--threshold", "0.99"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("availability 0.983333333333"), "{text}");
    assert!(text.contains("unavailable at threshold 0.99"), "{text}");
}

#[test]
fn bad_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[network]\nregions = 0\n").unwrap();
    let out = cloudlb(&["simulate", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    std::fs::write(&path, "not toml [").unwrap();
    let out = cloudlb(&["compare", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = cloudlb(&["avail", "--mp", "0", "--rl", "1", "--de", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("run");
    let out = cloudlb(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--policy",
        "esce",
        "--mode",
        "ss",
        "--seed",
        "3",
        "--hours",
        "1",
        "--out",
        out_dir.to_str().unwrap(),
        "--trace",
        "--assignments",
        "--arrivals",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "responses.csv",
        "services.csv",
        "loading.csv",
        "summary.json",
        "fig_response.dat",
        "fig_service.dat",
        "fig_loading.dat",
        "trace.tsv",
        "assignments.csv",
        "arrivals.csv",
    ] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    let read = |f: &str| std::fs::read_to_string(out_dir.join(f)).unwrap();
    assert_eq!(read("assignments.csv").lines().next(), Some("request_id,dc,vm,migrations"));
    assert_eq!(read("arrivals.csv").lines().next(), Some("request_id,ub,created_ms"));
    assert!(read("trace.tsv").lines().all(|l| l.split('\t').count() == 3));

    let summary: serde_json::Value = serde_json::from_str(&read("summary.json")).unwrap();
    assert_eq!(summary["policy"], "esce");
    assert_eq!(summary["seed"], 3);
    assert_eq!(summary["generated"], summary["returned"]);
    let rows = read("responses.csv").lines().count() as u64 - 1;
    assert_eq!(Some(rows), summary["returned"].as_u64());
    assert_eq!(read("arrivals.csv").lines().count() as u64 - 1, rows);
}

#[test]
fn compare_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = cloudlb(&[
        "compare",
        "--config",
        cfg.to_str().unwrap(),
        "--seeds",
        "2",
        "--threads",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("compare.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 6);
    assert_eq!(v["policies"].as_array().unwrap().len(), 3);
}
