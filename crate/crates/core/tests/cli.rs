use std::path::Path;
use std::process::Command;

use specreg::experiments::ExperimentConfig;
use specreg::filters::{FilterKind, FilterMethod};

const BIN: &str = env!("CARGO_BIN_EXE_specreg");

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

#[test]
fn shipped_configs_parse() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "json") {
            let cfg = ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            cfg.validate().unwrap();
            n += 1;
        }
    }
    assert_eq!(n, 9);
    for entry in std::fs::read_dir(configs().join("filters")).unwrap() {
        let p = entry.unwrap().path();
        let kind: FilterKind = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        FilterMethod::new(kind, 1.0).unwrap();
    }
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .env("SPECREG_THREADS", "2")
        .args(["run"])
        .arg(configs().join("bias_decay_borderline.json"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("bias_decay_borderline.rows.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "level,alpha,bias,noise_term,total,tail_bound");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("bias_decay_borderline.report.json")).unwrap()).unwrap();
    assert!(report["verdicts"].as_array().is_some_and(|v| !v.is_empty()));
}

#[test]
fn failing_verdict_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("bias_decay_rough.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["expect"] = "hold".into();
    let cfg = dir.path().join("rough_hold.json");
    std::fs::write(&cfg, v.to_string()).unwrap();
    let out = Command::new(BIN).arg("run").arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn errors_exit_two() {
    let out = Command::new(BIN).args(["run", "/nonexistent/config.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(BIN)
        .env("SPECREG_THREADS", "many")
        .args(["fixtures", "list"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fixtures_and_filters() {
    let out = Command::new(BIN).args(["fixtures", "list"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for name in ["single_layer_u1", "backward_heat_beta1", "sideways_heat_beta1", "gradiometry_r4"] {
        assert!(text.contains(name), "{name} missing");
    }
    let out = Command::new(BIN)
        .arg("check-filter")
        .arg(configs().join("filters/showalter.json"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["report"]["c_diag"].as_f64().unwrap() - (-1.0f64).exp()).abs() < 1e-12);
}
