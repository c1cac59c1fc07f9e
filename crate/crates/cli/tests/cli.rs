use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn dcso(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcso")).args(args).output().expect("binary runs")
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{"seed": 7, "prosumers": 3, "horizon": 6, "samples": 8, "trials": 2,
            "training": {"k": [1, 3, 8], "gamma": [0.0, 1.0], "po_k": 3}}"#,
    )
    .unwrap();
    path
}

#[test]
fn smoke_run_is_quick_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let start = Instant::now();
    let o = dcso(&["run", "--trials", "1", "--prosumers", "2", "--out", out.to_str().unwrap()]);
    let elapsed = start.elapsed();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(elapsed < Duration::from_secs(30), "smoke run took {elapsed:?}");
    for f in ["costs.csv", "peaks.csv", "profiles.csv", "residuals.csv", "summary.txt", "manifest.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert!(!out.join("FAILED").exists());
    let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("peak reduction"), "{summary}");
}

#[test]
fn missing_key_is_named_and_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"seed": 1, "prosumers": 2, "horizon": 4, "samples": 5}"#).unwrap();
    let o = dcso(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("trials"), "{err}");
}

#[test]
fn bad_flags_are_usage_errors() {
    assert_eq!(dcso(&["run", "--method", "LSTM"]).status.code(), Some(1));
    assert_eq!(dcso(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dcso(&["--help"]).status.code(), Some(0));
    assert_eq!(dcso(&["run", "--samples", "1"]).status.code(), Some(1));
}

#[test]
fn same_seed_same_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = dcso(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["costs.csv", "peaks.csv", "profiles.csv", "residuals.csv", "schedules.csv", "training.csv", "policies.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let ma: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(ma["seed"], 7);
    assert_eq!(ma["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn generate_writes_every_day_and_hash_tracks_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for (out, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        let o = dcso(&["generate", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let cov = std::fs::read_to_string(a.join("prosumer_0_covariates.csv")).unwrap();
    // header plus samples + trials days
    assert_eq!(cov.lines().count(), 1 + 8 + 2);
    assert_eq!(
        std::fs::read(a.join("prosumer_2_outcomes.csv")).unwrap(),
        std::fs::read(b.join("prosumer_2_outcomes.csv")).unwrap()
    );
    let hash = |d: &Path| {
        let m: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("manifest.json")).unwrap()).unwrap();
        m["config_sha256"].as_str().unwrap().to_string()
    };
    assert_eq!(hash(&a), hash(&b));
    assert_ne!(hash(&a), hash(&c));
}

#[test]
fn sensitivity_emits_one_row_per_point_and_method() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("s");
    let o = dcso(&[
        "sensitivity",
        "--config",
        cfg.to_str().unwrap(),
        "--values",
        "4,8",
        "--seeds",
        "1",
        "--method",
        "SAA",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("sensitivity.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sweep,value,method,count,median,q1,q3,mean");
    assert_eq!(lines.len(), 3);
}

#[test]
fn export_lp_round_trips_through_the_parser() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for kind in ["saa", "kkt"] {
        let o = dcso(&["export-lp", "--config", cfg.to_str().unwrap(), "--kind", kind, "--out", dir.path().to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let text = std::fs::read_to_string(dir.path().join(format!("prosumer_0_{kind}.lp"))).unwrap();
        let (qp, bins) = dcso::solver::parse_lp(&text).unwrap();
        assert!(qp.n_vars > 0);
        assert_eq!(bins.is_empty(), kind == "saa");
    }
}
