use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn mframe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mframe")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn config(rel: &str) -> String {
    root().join(rel).to_string_lossy().into_owned()
}

#[test]
fn print_schema_emits_json() {
    let o = mframe(&["print-schema"]);
    assert_eq!(code(&o), 0);
    let schema: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(schema["properties"]["semigroup"].is_object());
}

#[test]
fn shift_frame_verification_passes_with_exact_defects() {
    let out = tempfile::tempdir().unwrap();
    let o = mframe(&["--out", out.path().to_str().unwrap(), "run", &config("configs/acceptance/01-verify-frame-shift.json")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out.path().join("verify-frame-shift/report.json"));
    assert_eq!(report["results"]["frame"]["diagram_defect"].as_f64(), Some(0.0));
    let manifest = json(&out.path().join("verify-frame-shift/manifest.json"));
    assert_eq!(manifest["config_hash"].as_str().map(str::len), Some(64));
}

#[test]
fn cubic_probe_fails_with_witness() {
    let out = tempfile::tempdir().unwrap();
    let o = mframe(&["--out", out.path().to_str().unwrap(), "run", &config("configs/examples/probe-cubic-fails.json")]);
    assert_eq!(code(&o), 1);
    let report = json(&out.path().join("probe-cubic-fails/report.json"));
    let h2 = &report["results"]["conditions"]["conditions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["condition"] == "H2'")
        .cloned()
        .unwrap();
    assert_eq!(h2["pass"], false);
    assert!(h2["witness"]["x"].is_array());
}

#[test]
fn empty_config_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.json");
    fs::write(&path, "{}").unwrap();
    let o = mframe(&["--out", dir.path().to_str().unwrap(), "run", path.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    for field in ["kind", "semigroup", "noise"] {
        assert!(err.contains(field), "{err}");
    }
}

#[test]
fn overflow_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("blow.json");
    fs::write(
        &path,
        r#"{"kind": "simulate", "semigroup": {"kind": "identity", "dim": 1}, "model": {"id": "cubic"},
            "noise": {"dt": 0.5, "steps": 40}, "initial": [3.0], "test": {"scheme": "direct", "n_paths": 2}}"#,
    )
    .unwrap();
    let o = mframe(&["--out", dir.path().to_str().unwrap(), "run", path.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
}

#[test]
fn seed_override_is_recorded() {
    let out = tempfile::tempdir().unwrap();
    let o = mframe(&[
        "--out",
        out.path().to_str().unwrap(),
        "--seed-override",
        "77",
        "run",
        &config("configs/acceptance/05-flow-test.json"),
    ]);
    assert_eq!(code(&o), 0);
    let manifest = json(&out.path().join("flow-test/manifest.json"));
    assert_eq!(manifest["master_seed"], 77);
    assert_eq!(manifest["seed_override"], 77);
}

#[test]
fn acceptance_suite_passes_and_ignores_worker_count() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (d, workers) in dirs.iter().zip(["1", "3"]) {
        let o = mframe(&["--workers", workers, "--out", d.path().to_str().unwrap(), "suite", &config("configs/acceptance")]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    }
    let suite = json(&dirs[0].path().join("suite.json"));
    assert_eq!(suite["passed"], 9);
    assert_eq!(suite["total"], 9);
    for entry in suite["entries"].as_array().unwrap() {
        let name = entry["name"].as_str().unwrap();
        for file in ["manifest.json", "report.json"] {
            let a = fs::read(dirs[0].path().join(name).join(file)).unwrap();
            let b = fs::read(dirs[1].path().join(name).join(file)).unwrap();
            assert_eq!(a, b, "{name}/{file}");
        }
    }
    assert_eq!(fs::read(dirs[0].path().join("suite.json")).unwrap(), fs::read(dirs[1].path().join("suite.json")).unwrap());
}

#[test]
fn suite_errors_on_empty_directory_and_duplicate_names() {
    let dir = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let o = mframe(&["--out", out.path().to_str().unwrap(), "suite", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let text = fs::read_to_string(root().join("configs/acceptance/01-verify-frame-shift.json")).unwrap();
    fs::write(dir.path().join("a.json"), &text).unwrap();
    fs::write(dir.path().join("b.json"), &text).unwrap();
    let o = mframe(&["--out", out.path().to_str().unwrap(), "suite", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("duplicate"));
}

#[test]
fn zero_workers_is_rejected() {
    let o = mframe(&["--workers", "0", "print-schema"]);
    assert_eq!(code(&o), 2);
}
