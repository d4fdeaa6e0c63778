use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sim")).args(args).output().expect("spawn sim")
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"))
}

fn run_into(config: &Path, out: &Path) -> Output {
    sim(&["run", config.to_str().unwrap(), "--output", out.to_str().unwrap()])
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("scenario.json");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_then_verify_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("continuity");
    let o = run_into(&scenario("continuity"), &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["manifest.json", "config.json", "evolution_log.csv", "snapshots/00000.bin", "snapshots/00010.bin", "final.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let manifest: Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["scenario"], "continuity");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["files"]["evolution_log.csv"].is_string());

    let v = sim(&["verify", out.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(0), "{}", stdout(&v));
    assert!(stdout(&v).contains("PASS norm_conservation"));
    let again = sim(&["verify", out.to_str().unwrap()]);
    assert_eq!(stdout(&v), stdout(&again));
}

#[test]
fn corrupted_norm_column_fails_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert_eq!(run_into(&scenario("continuity"), &out).status.code(), Some(0));
    let log = out.join("evolution_log.csv");
    let text = fs::read_to_string(&log).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cols: Vec<String> = lines[5].split(',').map(String::from).collect();
    cols[1] = "1.001".into();
    lines[5] = cols.join(",");
    fs::write(&log, lines.join("\n") + "\n").unwrap();

    let v = sim(&["verify", out.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(1));
    let report = stdout(&v);
    assert!(report.contains("FAIL norm_conservation"), "{report}");
    assert!(report.contains("FAIL artifact_integrity"), "{report}");
}

#[test]
fn verify_errors_on_missing_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let v = sim(&["verify", empty.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(3));
    assert!(stderr(&v).contains("empty"));

    let v = sim(&["verify", tmp.path().join("nowhere").to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(3));

    fs::write(empty.join("stray.txt"), "x").unwrap();
    let v = sim(&["verify", empty.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(3));
    assert!(stderr(&v).contains("manifest.json"));
}

#[test]
fn malformed_config_points_at_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"schema_version": 1, "name": "bad", "grid": {"extent": [[-5, 5]], "points": [64]},
            "masses": [1], "initial_state": {"kind": "gaussian", "center": [0], "width": [1]},
            "hamiltonian": {"kind": "free"}, "evolution": {"t_final": 1, "dt": 0.1, "snapshot_evry": 2}}"#,
    );
    let o = run_into(&cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("evolution") && err.contains("snapshot_evry"), "{err}");
    assert!(!tmp.path().join("out").exists());

    let cfg = write_config(tmp.path(), r#"{"schema_version": 1, "name": "bad", "spin": {"system_grid": 3}}"#);
    let err = stderr(&run_into(&cfg, &tmp.path().join("out")));
    assert!(err.contains("spin.system_grid"), "{err}");

    let cfg = write_config(tmp.path(), "{ not json");
    assert_eq!(run_into(&cfg, &tmp.path().join("out")).status.code(), Some(2));
}

#[test]
fn stochastic_stage_requires_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("two-branch-born")).unwrap().replace("\"seed\": 7,", "");
    let o = run_into(&write_config(tmp.path(), &text), &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn setup_errors_are_schema_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("continuity")).unwrap().replace("[512]", "[500]");
    let o = run_into(&write_config(tmp.path(), &text), &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid"), "{}", stderr(&o));
}

#[test]
fn runtime_abort_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenario("continuity"))
        .unwrap()
        .replace("\"snapshot_every\": 10", "\"snapshot_every\": 10, \"edge_mass_abort\": 1e-300");
    let o = run_into(&write_config(tmp.path(), &text), &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("edge mass"), "{}", stderr(&o));
}

#[test]
fn refuses_non_empty_output() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("keep.txt"), "user data").unwrap();
    let o = run_into(&scenario("spin"), tmp.path());
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(fs::read_to_string(tmp.path().join("keep.txt")).unwrap(), "user data");
}

#[test]
fn two_branch_born_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("born");
    let o = run_into(&scenario("two-branch-born"), &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&fs::read(out.join("measurement.json")).unwrap()).unwrap();
    let p: Vec<f64> = report["probabilities_volume"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((p[0] - 0.3).abs() < 1e-8 && (p[1] - 0.7).abs() < 1e-8, "{p:?}");
    let f0 = report["empirical_frequencies"][0].as_f64().unwrap();
    assert!((0.285..=0.315).contains(&f0), "{f0}");
    assert_eq!(sim(&["verify", out.to_str().unwrap()]).status.code(), Some(0));
}

#[test]
fn spin_and_collapse_scenarios_verify() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["spin", "confined-collapse"] {
        let out = tmp.path().join(name);
        let o = run_into(&scenario(name), &out);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
        let v = sim(&["verify", out.to_str().unwrap()]);
        assert_eq!(v.status.code(), Some(0), "{name}: {}", stdout(&v));
    }
    let spin: Value = serde_json::from_slice(&fs::read(tmp.path().join("spin/spin.json")).unwrap()).unwrap();
    assert!((spin["probabilities_volume"]["up"].as_f64().unwrap() - 0.25).abs() < 1e-8);
    let collapse: Value = serde_json::from_slice(&fs::read(tmp.path().join("confined-collapse/measurement.json")).unwrap()).unwrap();
    assert!(collapse["collapse"]["max_divergence"].as_f64().unwrap() <= 1e-6);
}

fn files_except_manifest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "manifest.json" {
                out.push((path.strip_prefix(dir).unwrap().display().to_string(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario("two-particle-projection");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run_into(&cfg, &a).status.code(), Some(0));
    let o = sim(&["--threads", "1", "run", cfg.to_str().unwrap(), "--output", b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let fa = files_except_manifest(&a);
    assert!(fa.iter().any(|(n, _)| n == "trajectories.csv"));
    assert_eq!(fa, files_except_manifest(&b));
    let ma: Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let mb: Value = serde_json::from_slice(&fs::read(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(ma["files"], mb["files"]);
    assert_eq!(sim(&["verify", b.to_str().unwrap()]).status.code(), Some(0));
}
