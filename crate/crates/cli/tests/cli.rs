use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn occsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occsim")).args(args).output().expect("binary runs")
}

fn errors(out: &Output) -> Vec<Value> {
    let v: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    v["errors"].as_array().expect("errors array").clone()
}

/// A short copy of a preset written to `dir`.
fn scenario(dir: &Path, preset: &str, horizon: u64) -> String {
    let cfg = dir.join(format!("{preset}.json"));
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../core/presets/{preset}.json"));
    let mut v: Value = serde_json::from_str(&fs::read_to_string(src).unwrap()).unwrap();
    v["horizon"] = horizon.into();
    fs::write(&cfg, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    cfg.display().to_string()
}

#[test]
fn run_writes_run_directory_and_prints_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "bottleneck_switch", 1500);
    let out_dir = dir.path().join("run");
    let out = occsim(&["run", &cfg, "--seed", "7", "--out", out_dir.to_str().unwrap(), "--log-decisions", "--log-packets"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("scenario,seed,flow_id,controller,"));
    assert!(stdout.lines().nth(1).unwrap().starts_with("bottleneck_switch,7,0,occ,"));
    for f in ["config.json", "metrics.json", "metrics.csv", "decisions.csv", "packets.csv"] {
        assert!(out_dir.join(f).is_file(), "{f} missing");
    }
    assert_eq!(fs::read_to_string(out_dir.join("metrics.csv")).unwrap(), stdout);
}

#[test]
fn run_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "bursty_channel", 3000);
    let mut outputs = Vec::new();
    for i in 0..2 {
        let d = dir.path().join(format!("r{i}"));
        let out = occsim(&["run", &cfg, "--out", d.to_str().unwrap(), "--log-decisions"]);
        assert!(out.status.success());
        outputs.push((fs::read(d.join("metrics.csv")).unwrap(), fs::read(d.join("decisions.csv")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn sweep_prints_one_row_per_value_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "burst_sweep", 1000);
    let out_dir = dir.path().join("sweep");
    let out = occsim(&["sweep", &cfg, "--axis", "duty_cycle", "--values", "1/40,1/8,0.5,1", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let values: Vec<&str> = stdout.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(values, ["0.025", "0.125", "0.5", "1"]);
    assert_eq!(fs::read_to_string(out_dir.join("sweep.csv")).unwrap(), stdout);
    assert!(out_dir.join("duty_cycle=0.025").join("metrics.json").is_file());
}

#[test]
fn sweep_rejects_unknown_axis_with_valid_axes() {
    let out = occsim(&["sweep", "burst_sweep", "--axis", "colour", "--values", "1"]);
    assert!(!out.status.success());
    let msg = errors(&out)[0]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("colour") && msg.contains("duty_cycle") && msg.contains("vbv_multiple"));
}

#[test]
fn compare_emits_controller_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), "bursty_channel", 1500);
    let out = occsim(&["compare", &cfg, "--controllers", "occ,pbe,gcc"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let controllers: Vec<&str> = stdout.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(controllers, ["occ", "pbe", "gcc"]);

    let same = occsim(&["compare", &cfg, "--controllers", "occ,occ"]);
    let text = String::from_utf8(same.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows[0], rows[1]);
}

#[test]
fn validate_reports_every_violation_with_paths() {
    let dir = tempfile::tempdir().unwrap();
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/presets/fairness_internal.json");
    let mut v: Value = serde_json::from_str(&fs::read_to_string(src).unwrap()).unwrap();
    v["controller"] = serde_json::json!({ "beta": 1.5 });
    v["channels"].as_array_mut().unwrap().remove(1);
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, v.to_string()).unwrap();
    let out = occsim(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let errs = errors(&out);
    let paths: Vec<&str> = errs.iter().map(|e| e["path"].as_str().unwrap()).collect();
    assert!(paths.contains(&"controller.beta"), "{paths:?}");
    assert!(errs.iter().any(|e| e["message"].as_str().unwrap().contains("flow 1")), "{errs:?}");
}

#[test]
fn validate_accepts_presets_and_locates_parse_errors() {
    let ok = occsim(&["validate", "convergence_step"]);
    assert!(ok.status.success());
    let v: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(v["ok"], true);

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("broken.json");
    fs::write(&cfg, "{\n  \"horizon\": ,\n}").unwrap();
    let out = occsim(&["validate", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert_eq!(errors(&out)[0]["path"], "line 2, column 14");
}

#[test]
fn usage_errors_are_json() {
    let out = occsim(&["run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!errors(&out).is_empty());
    let missing = occsim(&["run", "/nonexistent/scenario.json"]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(errors(&missing)[0]["path"], "/nonexistent/scenario.json");
}
