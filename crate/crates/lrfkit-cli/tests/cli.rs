use assert_cmd::Command;
use predicates::prelude::*;

fn lrfkit() -> Command {
    Command::cargo_bin("lrfkit").expect("binary builds")
}

#[test]
fn verify_dyn_scope_passes_with_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    lrfkit()
        .args(["verify", "--scope", "dyn", "--out"])
        .arg(&out)
        .assert()
        .success();
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["passed"], true);
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.iter().any(|c| c["name"] == "scan_fft_duality"));
    for c in checks {
        assert!(c["residual"].as_f64().unwrap() <= c["tolerance"].as_f64().unwrap());
    }
}

#[test]
fn verify_injected_kernel_fault_exits_one_naming_the_check() {
    lrfkit()
        .args(["verify", "--scope", "dyn", "--inject-kernel-fault", "0.001"])
        .assert()
        .code(1)
        .stderr(predicate::str::contains("scan_fft_duality"));
}

#[test]
fn verify_analysis_scope_reports_grid_counts() {
    // the receptive-radius ordering grid fails by design; the report must
    // still carry both grids' pass counts and exit 1
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    lrfkit()
        .args(["verify", "--scope", "analysis", "--out"])
        .arg(&out)
        .assert()
        .code(1);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let checks = report["checks"].as_array().unwrap();
    let names: Vec<&str> = checks.iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"theorem1_grid"));
    assert!(names.contains(&"theorem2_grid"));
    for c in checks {
        assert!(c["detail"].as_str().unwrap().contains("grid points") || !c["detail"].as_str().unwrap().is_empty());
    }
}

#[test]
fn analyze_vsa_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    lrfkit()
        .args(["analyze", "--mechanism", "vsa", "--beta", "0.6931471805599453", "--n", "64", "--out"])
        .arg(dir.path())
        .assert()
        .success();
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let mu: f64 = summary.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((mu - 1.0).abs() <= 1e-6, "mu {mu}");
    let hist = std::fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
    assert_eq!(hist.lines().count(), 65); // header + 64 buckets
    let total: f64 = hist
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() <= 1e-9);
}

#[test]
fn analyze_flat_ssa_has_log_n_entropy() {
    let dir = tempfile::tempdir().unwrap();
    lrfkit()
        .args(["analyze", "--mechanism", "ssa", "--beta", "0", "--n", "16", "--out"])
        .arg(dir.path())
        .assert()
        .success();
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let h: f64 = summary.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!((h - (16f64).ln()).abs() <= 1e-9, "entropy {h}");
}

#[test]
fn analyze_lrf_with_zero_lambda_degenerates_to_ssa() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    lrfkit()
        .args(["analyze", "--mechanism", "ssa", "--beta", "0.05", "--n", "32", "--out"])
        .arg(a.path())
        .assert()
        .success();
    lrfkit()
        .args(["analyze", "--mechanism", "lrf-ssa", "--beta", "0.05", "--n", "32", "--lambda", "0", "--out"])
        .arg(b.path())
        .assert()
        .success();
    let ha = std::fs::read_to_string(a.path().join("histogram.csv")).unwrap();
    let hb = std::fs::read_to_string(b.path().join("histogram.csv")).unwrap();
    assert_eq!(ha, hb);
}

#[test]
fn bench_mem_d512_k8_ratio_is_64() {
    let out = lrfkit()
        .args(["bench-mem", "--modes", "ssa_v2,lrf_dyn", "--n", "16", "--d", "512", "--k", "8"])
        .assert()
        .success()
        .get_output()
        .stdout
        .clone();
    let text = String::from_utf8(out).unwrap();
    let mut peaks = std::collections::HashMap::new();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        peaks.insert(cols[0].to_string(), cols[4].parse::<usize>().unwrap());
    }
    assert_eq!(peaks["ssa_v2"] / peaks["lrf_dyn"], 64);
}

#[test]
fn bench_mem_sweep_csv_is_parseable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    lrfkit()
        .args(["bench-mem", "--n", "16,64", "--d", "64,256", "--k", "8", "--out"])
        .arg(&out)
        .assert()
        .success();
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "mode,n,d,k,peak_state_values,local_buffer_values,total");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4 * 4); // 4 modes x (2 n x 2 d)
    for row in rows {
        assert_eq!(row.split(',').count(), 7);
    }
}

#[test]
fn bench_mem_json_carries_schema_version() {
    let out = lrfkit()
        .args(["bench-mem", "--modes", "ssa_v1", "--n", "16", "--d", "64", "--format", "json"])
        .assert()
        .success()
        .get_output()
        .stdout
        .clone();
    let report: serde_json::Value = serde_json::from_slice(&out).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["rows"][0]["peak_state_values"], 256);
}

#[test]
fn train_zero_epochs_writes_single_chance_row() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    lrfkit()
        .args(["train", "--model", "lrf_ssa", "--seed", "0", "--epochs", "0", "--out-log"])
        .arg(&log)
        .assert()
        .success();
    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "epoch,train_loss,train_acc,test_acc");
    let acc: f64 = lines[1].split(',').nth(3).unwrap().parse().unwrap();
    assert!((acc - 0.25).abs() <= 0.1, "chance-level accuracy, got {acc}");
}

#[test]
fn train_requires_explicit_seed() {
    lrfkit()
        .args(["train", "--model", "ssa"])
        .assert()
        .code(2)
        .stderr(predicate::str::contains("--seed"));
}

#[test]
fn train_reruns_reproduce_identical_log_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for log in [&a, &b] {
        lrfkit()
            .args(["train", "--model", "ssa", "--seed", "7", "--epochs", "1", "--out-log"])
            .arg(log)
            .assert()
            .success();
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn export_kernel_from_checkpoint_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.csv");
    let ckpt = dir.path().join("model.ckpt");
    lrfkit()
        .args(["train", "--model", "lrf_dyn", "--seed", "1", "--epochs", "0", "--out-log"])
        .arg(&log)
        .arg("--out-checkpoint")
        .arg(&ckpt)
        .assert()
        .success();
    let kern = dir.path().join("kernel.csv");
    lrfkit()
        .args(["export-kernel", "--len", "8", "--checkpoint"])
        .arg(&ckpt)
        .arg("--out")
        .arg(&kern)
        .assert()
        .success();
    let text = std::fs::read_to_string(&kern).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "m,channel,tap_value");
    assert_eq!(lines.len(), 1 + 8 * 16); // header + len x d channels
}

#[test]
fn export_kernel_synthetic_requires_seed() {
    lrfkit()
        .args(["export-kernel", "--k", "4", "--d", "2"])
        .assert()
        .code(2)
        .stderr(predicate::str::contains("--seed"));
}

#[test]
fn unknown_mechanism_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    lrfkit()
        .args(["analyze", "--mechanism", "bogus", "--beta", "0.1", "--out"])
        .arg(dir.path())
        .assert()
        .code(2);
    assert!(!dir.path().join("histogram.csv").exists(), "no partial output on failure");
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"bench_mem": {"modes": "ssa_v1", "n": "16", "d": "64", "k": "8"}}"#,
    )
    .unwrap();
    let from_file = lrfkit()
        .arg("--config")
        .arg(&cfg)
        .arg("bench-mem")
        .assert()
        .success()
        .get_output()
        .stdout
        .clone();
    let text = String::from_utf8(from_file).unwrap();
    assert!(text.contains("ssa_v1,16,64,1,256,0,256"));
    let overridden = lrfkit()
        .arg("--config")
        .arg(&cfg)
        .args(["bench-mem", "--n", "32"])
        .assert()
        .success()
        .get_output()
        .stdout
        .clone();
    let text = String::from_utf8(overridden).unwrap();
    assert!(text.contains("ssa_v1,32,64,1,1024,0,1024"));
}
