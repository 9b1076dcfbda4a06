use std::path::Path;
use std::process::{Command, Output};

use hatqmc_cli::fit_slope;
use hatqmc_cli::report::pairs_from_csv;

fn hatqmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hatqmc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn oracle(dir: &Path) {
    let o = hatqmc(&["oracle", "--out-dir", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn bad_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"levels": 3, "no_such_field": 1}"#).unwrap();
    let o = hatqmc(&["converge", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = hatqmc(&["converge", "--levels", "0", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = hatqmc(&["converge", "--tail-mult", "-1", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_golden_points_to_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let o = hatqmc(&["converge", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hatqmc oracle"), "{}", stderr(&o));
}

#[test]
fn dataset_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("sub/b.json");
    for p in [&a, &b] {
        let o = hatqmc(&["dataset", "--out", p.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["y"].as_array().unwrap().len(), 26);
    assert_eq!(v["t_i"].as_array().unwrap().len(), 13);
}

#[test]
fn single_level_gives_one_row_per_integrand() {
    let dir = tempfile::tempdir().unwrap();
    oracle(dir.path());
    let o = hatqmc(&[
        "converge",
        "--levels",
        "1",
        "--qoi",
        "f2",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("slope unavailable"));
    let csv = std::fs::read_to_string(dir.path().join("banana_adaptive.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn reports_agree_with_each_other() {
    let dir = tempfile::tempdir().unwrap();
    oracle(dir.path());
    let o = hatqmc(&["converge", "--levels", "3", "--out-dir", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("banana_adaptive.csv")).unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("banana_adaptive.json")).unwrap()).unwrap();
    let records = json["records"].as_array().unwrap();
    assert_eq!(records.len(), 3);
    assert_eq!(csv.lines().count(), 1 + 3 * 3);
    for r in records {
        let qoi = r["qoi"].as_str().unwrap();
        let pairs = pairs_from_csv(&csv, qoi);
        assert_eq!(pairs.len(), 3);
        let ns: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        assert_eq!(ns, [4096.0, 16384.0, 65536.0]);
        let slope = r["slope"].as_f64().unwrap();
        assert!((slope - fit_slope(&pairs).unwrap()).abs() < 1e-12, "{qoi}");
    }
}

#[test]
fn approx_and_integrate_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = hatqmc(&["approx", "--level", "1", "--out-dir", d]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("banana_adaptive_approx_1.json")).unwrap();
    assert!(text.len() > 100);
    let o = hatqmc(&["integrate", "--qoi", "f1", "--out-dir", d]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = String::from_utf8_lossy(&o.stdout).into_owned();
    let value: f64 = line.trim().split(" = ").nth(1).unwrap().parse().unwrap();
    assert!(value.is_finite() && value > 0.0);
}
