use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use subeik::pipeline::{run, RunOptions, OUT_ENV};
use subeik::scenario::{builtin_scenarios, lookup};

fn subeik() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_subeik"));
    c.env_remove(OUT_ENV);
    c
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn list_names_every_scenario() {
    let out = subeik().arg("list").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for s in builtin_scenarios() {
        assert!(text.contains(&s.name), "{} missing", s.name);
    }
}

#[test]
fn repeated_runs_write_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    for k in 0..2 {
        let out = subeik()
            .args(["run", "heisenberg-ball", "--grid", "17", "--seed", "9", "--out"])
            .arg(tmp.path().join(format!("r{k}")))
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    }
    let a = snapshot(&tmp.path().join("r0/heisenberg-ball"));
    let b = snapshot(&tmp.path().join("r1/heisenberg-ball"));
    assert!(a.contains_key("report.json") && a.contains_key("T.csv") && a.contains_key("sing_map.csv"));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (name, bytes) in &a {
        assert!(bytes == &b[name], "{name} differs between runs");
    }
}

#[test]
fn env_var_sets_output_root_and_flag_wins() {
    let tmp = tempfile::tempdir().unwrap();
    let env_root = tmp.path().join("env");
    let flag_root = tmp.path().join("flag");
    subeik()
        .args(["run", "riemann-disc", "--grid", "17"])
        .env(OUT_ENV, &env_root)
        .output()
        .unwrap();
    assert!(env_root.join("riemann-disc/report.json").exists());
    subeik()
        .args(["run", "riemann-disc", "--grid", "17", "--out"])
        .arg(&flag_root)
        .env(OUT_ENV, tmp.path().join("ignored"))
        .output()
        .unwrap();
    assert!(flag_root.join("riemann-disc/report.json").exists());
    assert!(!tmp.path().join("ignored").exists());
}

#[test]
fn check_accepts_round_tripped_configs_and_rejects_junk() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("trap.json");
    let cfg = lookup("martinet-trap").unwrap().to_config();
    std::fs::write(&good, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let out = subeik().arg("check").arg(&good).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("martinet-trap"));

    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"system": [], "domain": 3}"#).unwrap();
    let out = subeik().arg("check").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("invalid configuration"));
    let out = subeik().args(["run", "no-such-scenario"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn disc_run_passes_and_reports_in_memory() {
    let sc = lookup("riemann-disc").unwrap();
    let a = run(&sc, &RunOptions { grid: Some(65), ..Default::default() });
    assert!(a.report.passed, "{}", a.report.summary());
    assert_eq!(a.report.exit_code(), 0);
    assert_eq!(a.fine.unwrap().grid().resolution(), &[129, 129]);
    assert!(a.arcs.is_empty());
}
