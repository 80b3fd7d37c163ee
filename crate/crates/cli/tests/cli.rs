use std::path::Path;
use std::process::{Command, Output};

const BENCH: &str = r#"{"n_neurons": 2, "cap": "2", "weights": [["0", "1"], ["1", "0"]],
  "intensity": {"kind": "affine", "a": "1", "b": "1"}, "delta": "1"}"#;

fn pjmp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pjmp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    names
}

#[test]
fn missing_config_fails_naming_the_path() {
    let out = pjmp(&["verify", "--config", "/definitely/not/here.json"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/definitely/not/here.json"), "{err}");
}

#[test]
fn malformed_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", "{\n \"network\": 3,\n}");
    let out = pjmp(&["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
}

#[test]
fn verify_all_on_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bench.json", BENCH);
    let out_dir = dir.path().join("out");
    let out = pjmp(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csvs = csv_files(&out_dir);
    assert!(csvs.len() >= 6, "{csvs:?}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["pass"], true);
    assert_eq!(manifest["subcommand"], "run:verify-all");
    assert!(manifest["artifacts"].as_array().unwrap().len() >= 6);
}

#[test]
fn same_seed_gives_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(r#"{{"network": {BENCH}, "experiment": "concentration", "n_paths": 2000, "times": [1.0]}}"#);
    let cfg = write_config(dir.path(), "conc.json", &text);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (d, threads) in [(&a, "1"), (&b, "3")] {
        let out = pjmp(&["run", "--config", &cfg, "--seed", "42", "--threads", threads, "--out", d.to_str().unwrap()]);
        assert_ne!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for (d, threads) in [(&a, "2"), (&b, "4")] {
        let out = pjmp(&[
            "simulate", "--config", &cfg, "--seed", "42", "--threads", threads, "--paths", "50", "--out",
            d.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    let names = csv_files(&a);
    assert_eq!(names, vec!["concentration.csv", "simulate.csv"]);
    for name in names {
        let x = std::fs::read(a.join(&name)).unwrap();
        let y = std::fs::read(b.join(&name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn kernel_and_statespace_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bench.json", BENCH);
    let out_dir = dir.path().join("o");
    let o = out_dir.to_str().unwrap();
    assert!(pjmp(&["kernel", "--config", &cfg, "--t", "1", "--out", o]).status.success());
    let kernel = std::fs::read_to_string(out_dir.join("kernel.csv")).unwrap();
    assert_eq!(kernel.lines().count(), 17);
    assert!(pjmp(&["statespace", "--config", &cfg, "--out", o]).status.success());
    let ss = std::fs::read_to_string(out_dir.join("statespace.csv")).unwrap();
    assert_eq!(ss.lines().next().unwrap(), "state_index,potentials,target_0,rate_0,target_1,rate_1");
    assert_eq!(ss.lines().count(), 5);
    assert!(pjmp(&["statespace", "--reachable", "--config", &cfg, "--out", o]).status.success());
    let reach = std::fs::read_to_string(out_dir.join("reachable.csv")).unwrap();
    assert_eq!(reach.lines().count(), 6);
}

#[test]
fn simulate_at_times_and_bad_x0() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bench.json", BENCH);
    let out_dir = dir.path().join("o");
    let o = out_dir.to_str().unwrap();
    let ok = pjmp(&[
        "simulate", "--config", &cfg, "--paths", "3", "--at", "0.5,1", "--x0", "1;0", "--sampler", "thinning",
        "--out", o,
    ]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let text = std::fs::read_to_string(out_dir.join("simulate.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 2);
    assert!(text.lines().nth(1).unwrap().starts_with("0,0.5,"));
    let bad = pjmp(&["simulate", "--config", &cfg, "--x0", "0;0", "--out", o]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("invariant domain"));
}

#[test]
fn failing_suite_exits_nonzero_with_names() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(r#"{{"network": {BENCH}, "experiment": "empirical", "n_paths": 500, "x0": ["1;0"]}}"#);
    let cfg = write_config(dir.path(), "emp.json", &text);
    let out = pjmp(&["run", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FAIL empirical"));
}
