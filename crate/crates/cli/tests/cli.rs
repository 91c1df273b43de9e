use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wass_splines_cli::Manifest;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_wass-splines"));
    c.env("RUST_LOG", "warn");
    c
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples").join(name)
}

fn run(config: &Path, out: &Path) -> Output {
    bin().arg("run").arg(config).arg("--out").arg(out).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"{
  "schema_version": 1,
  "solver": "mm-geodesic",
  "grid": {"nx": 12, "lo": [0], "hi": [1]},
  "time": {"n_steps": 4, "dtau": 0.5},
  EPS
  "constraints": [
    {"step": 0, "mixture": [{"mean": [0.3], "variance": 0.01}]},
    {"time": TIME, "mixture": [{"mean": [0.6], "variance": 0.01}]}
  ]
}"#;

fn small(dir: &Path, eps: &str, time: &str) -> PathBuf {
    let p = dir.join("small.json");
    fs::write(&p, SMALL.replace("EPS", eps).replace("TIME", time)).unwrap();
    p
}

#[test]
fn missing_epsilon_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), "", "1.5");
    let o = run(&cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("epsilon"), "{msg}");
    assert_eq!(msg.trim().lines().count(), 1, "{msg}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn validate_reports_ok_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), r#""epsilon": 0.05,"#, "1.5");
    let o = bin().arg("validate").arg(&cfg).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "ok");

    let cfg = small(dir.path(), r#""epsilon": 0.05,"#, "1.2");
    let o = bin().arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("only constrains grid times"), "{}", stderr(&o));

    let text = fs::read_to_string(example("extrapolate_translation.json")).unwrap();
    let bad = text.replacen("\"epsilon\"", "\"lambda\": -0.5,\n  \"epsilon\"", 1);
    let p = dir.path().join("neg.json");
    fs::write(&p, bad).unwrap();
    let o = bin().arg("validate").arg(&p).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lambda"), "{}", stderr(&o));

    let o = bin().arg("validate").arg(dir.path().join("nope.json")).output().unwrap();
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn every_example_validates() {
    for e in fs::read_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("examples")).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "json") {
            let o = bin().arg("validate").arg(&p).output().unwrap();
            assert!(o.status.success(), "{}: {}", p.display(), stderr(&o));
        }
    }
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), r#""epsilon": 0.05,"#, "1.5");
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "").unwrap();
    let o = run(&cfg, &blocker.join("sub"));
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn bad_thread_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), r#""epsilon": 0.05,"#, "1.5");
    let o = bin().env("WASS_SPLINES_THREADS", "zero").arg("validate").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("WASS_SPLINES_THREADS"));
    let o = bin().env("WASS_SPLINES_THREADS", "1").arg("validate").arg(&cfg).output().unwrap();
    assert!(o.status.success());
}

fn listed_and_present(out: &Path) -> (BTreeSet<String>, BTreeSet<String>) {
    let m: Manifest = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let listed: BTreeSet<String> = m.files.iter().map(|f| f.path.clone()).collect();
    let present: BTreeSet<String> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    (listed, present)
}

#[test]
fn manifest_is_complete_and_runs_are_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["extrapolate_translation.json", "hermite.json", "sd_extrapolate_merge.json"] {
        let a = dir.path().join(format!("{name}.a"));
        let b = dir.path().join(format!("{name}.b"));
        for out in [&a, &b] {
            let o = run(&example(name), out);
            assert!(o.status.success(), "{name}: {}", stderr(&o));
        }
        let (listed, present) = listed_and_present(&a);
        assert_eq!(listed, present, "{name}");
        for f in &listed {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{name}: {f}");
        }
    }
    let (listed, _) = listed_and_present(&dir.path().join("extrapolate_translation.json.a"));
    assert_eq!(listed.iter().filter(|f| f.starts_with("marginal_")).count(), 3);
}

#[test]
fn marginal_files_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = run(&example("extrapolate_translation.json"), &out);
    assert!(o.status.success());
    let d = wass_splines::io::read_density(&out.join("marginal_002.csv")).unwrap();
    assert_eq!(d.grid().nx(), 100);
    assert!((d.mass() - 1.0).abs() < 1e-12);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.lines().any(|l| l == "iteration,residual"));
}
