//! End-to-end checks of the command-line contract: exit codes, artifact
//! layout, and byte-level reproducibility.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qcorridor"))
}

fn monitor_config(output: &Path, n_samples: usize) -> String {
    format!(
        r#"{{
  "experiment": "monitor",
  "system": {{
    "levels": [-0.5, 0.5],
    "couplingRe": [[0.0, 0.5], [0.5, 0.0]],
    "couplingIm": [[0.0, 0.0], [0.0, 0.0]],
    "pulseWindow": [0.0, 3.141592653589793]
  }},
  "measurement": {{"kappa": 2.2736420441699332, "duration": 4.71238898038469, "dt": 0.009424777960769379}},
  "sampling": {{"nSamples": {n_samples}, "seed": 11}},
  "output": "{}"
}}"#,
        output.display()
    )
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        out.insert(
            entry.file_name().to_string_lossy().to_string(),
            fs::read(entry.path()).unwrap(),
        );
    }
    out
}

#[test]
fn validate_accepts_good_config() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    fs::write(&config_path, monitor_config(&dir.path().join("out"), 50)).unwrap();
    let status = bin().arg("validate").arg(&config_path).status().unwrap();
    assert!(status.success());
}

#[test]
fn malformed_json_exits_2_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    let out = dir.path().join("out");
    fs::write(&config_path, "{ not json").unwrap();
    let status = bin().arg("run").arg(&config_path).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.exists(), "no output may be created on config errors");
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    let text = monitor_config(&dir.path().join("out"), 50)
        .replace("\"seed\": 11", "\"seed\": 11, \"typo\": true");
    fs::write(&config_path, text).unwrap();
    let status = bin().arg("validate").arg(&config_path).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn monitor_run_produces_expected_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    let out = dir.path().join("out");
    fs::write(&config_path, monitor_config(&out, 120)).unwrap();
    let output = bin().arg("run").arg(&config_path).arg("--threads").arg("2").output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    for name in ["manifest.json", "report.json", "summary.txt", "density_readout.csv", "density_p2.csv"] {
        assert!(out.join(name).exists(), "missing artifact {name}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for field in ["regime", "pTransition", "pTransitionSe", "fidelity", "fidelitySe", "ambiguousFraction", "nEffective"] {
        assert!(report.get(field).is_some(), "report.json missing {field}");
    }
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("p_transition"));
}

#[test]
fn identical_config_gives_byte_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    fs::write(&config_path, monitor_config(&dir.path().join("unused"), 80)).unwrap();

    // different thread counts must not change any byte either
    let s1 = bin().arg("run").arg(&config_path).arg("--out").arg(&out_a).arg("--threads").arg("1").status().unwrap();
    let s2 = bin().arg("run").arg(&config_path).arg("--out").arg(&out_b).arg("--threads").arg("4").status().unwrap();
    assert!(s1.success() && s2.success());
    assert_eq!(read_tree(&out_a), read_tree(&out_b));
}

#[test]
fn seed_override_changes_numeric_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    fs::write(&config_path, monitor_config(&dir.path().join("unused"), 80)).unwrap();
    bin().arg("run").arg(&config_path).arg("--out").arg(&out_a).status().unwrap();
    bin().arg("run").arg(&config_path).arg("--out").arg(&out_b).arg("--seed").arg("99").status().unwrap();
    let a = fs::read(out_a.join("report.json")).unwrap();
    let b = fs::read(out_b.join("report.json")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn suite_passes_on_a_quiet_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    let out = dir.path().join("out");
    // modest measurement, 400 trajectories: all three arrows well inside tolerance
    let text = monitor_config(&out, 400).replace("\"kappa\": 2.2736420441699332", "\"kappa\": 0.3");
    fs::write(&config_path, text).unwrap();
    let output = bin().arg("suite").arg(&config_path).output().unwrap();
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(output.status.success(), "stdout: {stdout}\nstderr: {}", String::from_utf8_lossy(&output.stderr));
    assert_eq!(stdout.matches("PASS").count(), 3, "three arrows reported: {stdout}");
    assert!(out.join("suite.json").exists());
}

#[test]
fn suite_trivially_passes_without_measurement() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    let out = dir.path().join("out");
    let text = monitor_config(&out, 200).replace("\"kappa\": 2.2736420441699332", "\"kappa\": 0.0");
    fs::write(&config_path, text).unwrap();
    let output = bin().arg("suite").arg(&config_path).output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn zeno_scan_writes_table_with_unit_first_row() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    let out = dir.path().join("out");
    let mut config: serde_json::Value =
        serde_json::from_str(&monitor_config(&out, 150)).unwrap();
    config["experiment"] = "zeno-scan".into();
    config["zenoScan"] = serde_json::json!({"kappas": [0.0, 0.5, 2.0]});
    fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let output = bin().arg("run").arg(&config_path).output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let scan = fs::read_to_string(out.join("scan.csv")).unwrap();
    let mut lines = scan.lines();
    assert_eq!(
        lines.next().unwrap(),
        "kappa,level_resolution_time,p_transition,standard_error,n_effective"
    );
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "0.0");
    let p: f64 = first[2].parse().unwrap();
    assert!((p - 1.0).abs() < 1e-6, "kappa = 0 row must have unit transition probability");
}
