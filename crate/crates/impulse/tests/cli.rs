use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cfg(rel: &str) -> String {
    configs().join(rel).display().to_string()
}

fn impulse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_impulse")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

/// Small controlled problem: 61 nodes on [−3, 3], 21 slices.
fn small_solve(dir: &Path) -> String {
    let solver = write(dir, "solver.json", r#"{"axes": [{"lo": -3.0, "hi": 3.0, "count": 61}], "t_count": 21}"#);
    let out = dir.join("sol").display().to_string();
    let o = impulse(&["solve", "--problem", &cfg("controlled/problem.json"), "--solver", &solver, "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn missing_problem_file_exits_1_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json").display().to_string();
    let o = impulse(&["solve", "--problem", &missing, "--solver", &cfg("heat_baseline/solver.json"), "--out", "x"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains(&missing), "{}", stderr(&o));
}

#[test]
fn malformed_json_reports_position() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write(tmp.path(), "p.json", "{\n  \"dim\": 1,\n  \"horizon\": ,\n}");
    let o = impulse(&["solve", "--problem", &p, "--solver", &cfg("heat_baseline/solver.json"), "--out", "x"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn dominance_violation_exits_2_unless_forced() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("heat_baseline/problem.json")).unwrap().replace("\"mu\": 1.0", "\"mu\": 0.5");
    let p = write(tmp.path(), "p.json", &text);
    let s = write(tmp.path(), "s.json", r#"{"axes": [{"lo": -2.0, "hi": 2.0, "count": 41}], "t_count": 11}"#);
    let out = tmp.path().join("out").display().to_string();
    let o = impulse(&["solve", "--problem", &p, "--solver", &s, "--out", &out]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("assumption failure"), "{}", stderr(&o));
    assert!(!Path::new(&out).exists());

    let o = impulse(&["solve", "--problem", &p, "--solver", &s, "--out", &out, "--force"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&Path::new(&out).join("summary.json"))["forced"], true);
}

#[test]
fn zero_paths_is_invalid() {
    let tmp = tempfile::tempdir().unwrap();
    let mc = write(tmp.path(), "mc.json", r#"{"dt": 0.01, "n_paths": 0}"#);
    let o = impulse(&[
        "simulate", "--problem", &cfg("brownian_x2/problem.json"), "--strategy", "none", "--x0", "0", "--t0", "0",
        "--mc", &mc, "--out", &tmp.path().join("o").display().to_string(),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn corrupted_artifact_is_detected() {
    let tmp = tempfile::tempdir().unwrap();
    let sol = small_solve(tmp.path());
    let slice = Path::new(&sol).join("slices/slices_0003.csv");
    let mut text = std::fs::read_to_string(&slice).unwrap();
    text.push_str("\n");
    std::fs::write(&slice, text).unwrap();
    let o = impulse(&["validate", "--solution", &sol, "--checks", "bounds", "--out", &tmp.path().join("v").display().to_string()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("artifact integrity"), "{}", stderr(&o));
    assert!(stderr(&o).contains("slices_0003.csv"), "{}", stderr(&o));
}

#[test]
fn brownian_square_matches_closed_form() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = impulse(&[
        "simulate", "--problem", &cfg("brownian_x2/problem.json"), "--strategy", "none", "--x0", "-1.5", "--t0", "0",
        "--mc", &cfg("mc/paths_1e4.json"), "--out", &out.display().to_string(), "--dump-paths", "3",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let est = json(&out.join("estimate.json"));
    let mean = est["mean"].as_f64().unwrap();
    let ci95 = est["ci95"].as_f64().unwrap();
    assert!((mean - 3.25).abs() <= ci95 + 1e-3, "{mean} ± {ci95}");
    assert_eq!(est["n_paths"], 10000);
    let path = std::fs::read_to_string(out.join("paths/path_00002.csv")).unwrap();
    assert!(path.starts_with("t,x0,impulses\n"));
    assert_eq!(path.lines().count(), 1002);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn strategies_dispatch() {
    let tmp = tempfile::tempdir().unwrap();
    let sol = small_solve(tmp.path());
    let run = |strategy: &str, name: &str| {
        let out = tmp.path().join(name);
        let o = impulse(&[
            "simulate", "--problem", &cfg("controlled/problem.json"), "--strategy", strategy, "--x0", "2.5", "--t0", "0",
            "--mc", &cfg("mc/paths_1e4.json"), "--out", &out.display().to_string(),
        ]);
        assert_eq!(code(&o), 0, "{strategy}: {}", stderr(&o));
        json(&out.join("estimate.json"))
    };
    let policy = run(&format!("policy:{sol}"), "policy");
    let value = policy["value"].as_f64().unwrap();
    assert!((policy["gap"].as_f64().unwrap() - (policy["mean"].as_f64().unwrap() - value)).abs() < 1e-12);
    let none = run("none", "none");
    assert!(none.get("value").is_none());
    let fixed = run("fixed:0.0:-2.5", "fixed");
    let file = run(&format!("file:{}", cfg("strategies/threshold_recentre.json")), "file");
    // doing nothing from x = 2.5 costs more than recentring
    for s in [&policy, &fixed, &file] {
        assert!(s["mean"].as_f64().unwrap() < none["mean"].as_f64().unwrap());
    }
    let o = impulse(&[
        "simulate", "--problem", &cfg("controlled/problem.json"), "--strategy", "bogus", "--x0", "0", "--t0", "0",
        "--mc", &cfg("mc/paths_1e4.json"), "--out", &tmp.path().join("bad").display().to_string(),
    ]);
    assert_ne!(code(&o), 0);
}

#[test]
fn validate_reports_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let sol = small_solve(tmp.path());
    let out = tmp.path().join("v");
    let o = impulse(&[
        "validate", "--solution", &sol, "--checks", "dpp,obstacle", "--config", &cfg("controlled/validate.json"),
        "--out", &out.display().to_string(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().count(), 2, "{stdout}");
    let reports = json(&out.join("checks.json"));
    assert_eq!(reports[0]["id"], "dpp");
    assert!(reports[0]["tolerances"]["tol_dpp"].as_f64().unwrap() > 0.0);
    assert!(reports[0]["values"]["rhs"].is_number());

    // an impossible viscosity tolerance makes the check fail
    let strict = write(tmp.path(), "strict.json", r#"{"viscosity": {"tol_visc": 0.0, "max_violation_rate": 0.0, "n_probes": 50}}"#);
    let o = impulse(&[
        "validate", "--solution", &sol, "--checks", "viscosity", "--config", &strict, "--out", &tmp.path().join("w").display().to_string(),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let o = impulse(&["validate", "--solution", &sol, "--checks", "dpp,nonsense", "--out", &tmp.path().join("x").display().to_string()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn heat_baseline_passes_every_check() {
    let tmp = tempfile::tempdir().unwrap();
    let sol = tmp.path().join("heat").display().to_string();
    let o = impulse(&["solve", "--problem", &cfg("heat_baseline/problem.json"), "--solver", &cfg("heat_baseline/solver.json"), "--out", &sol]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = tmp.path().join("v");
    let o = impulse(&["validate", "--solution", &sol, "--config", &cfg("heat_baseline/validate.json"), "--out", &out.display().to_string()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let reports = json(&out.join("checks.json"));
    for r in reports.as_array().unwrap() {
        assert_eq!(r["status"], "pass", "{r}");
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |jobs: &str| {
        let out = tmp.path().join(format!("j{jobs}"));
        let o = impulse(&[
            "--jobs", jobs, "simulate", "--problem", &cfg("jump_1d/problem.json"), "--strategy", "none", "--x0", "0.3",
            "--t0", "0.2", "--mc", &cfg("mc/paths_1e4.json"), "--out", &out.display().to_string(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(out.join("estimate.json")).unwrap()
    };
    assert_eq!(run("1"), run("3"));
}
