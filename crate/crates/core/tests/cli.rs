use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use leadfollow::config::ScenarioConfig;
use leadfollow::scenarios::{builtin, SINGLE_FOLLOWER};

fn leadfollow(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leadfollow"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, edit: impl FnOnce(&mut ScenarioConfig)) -> String {
    let mut cfg = ScenarioConfig::from_scenario(&builtin(SINGLE_FOLLOWER).unwrap());
    edit(&mut cfg);
    let path = dir.join(name);
    fs::write(&path, cfg.to_toml_string()).unwrap();
    path.display().to_string()
}

#[test]
fn validate_bundled_formation() {
    let dir = tempfile::tempdir().unwrap();
    let out = leadfollow(&["validate", "--builtin", "formation-sec5"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.matches(": PASS").count(), 4, "{text}");
    assert!(text.contains("4/4 assumptions hold"));
}

#[test]
fn validate_names_the_failed_leader_assumption() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "unstable.toml", |c| {
        c.leader.s = vec![vec![2.0, 0.0], vec![0.0, 2.0]];
    });
    let out = leadfollow(&["validate", &path], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("Assumption 2 (leader spectral radius at most 1): FAIL"), "{text}");
    assert!(text.contains("witness: rho(S) = 2"), "{text}");
}

#[test]
fn ragged_matrix_is_a_schema_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "ragged.toml", |c| {
        c.followers[0].a = vec![vec![1.0, 0.0], vec![1.0]];
    });
    let out = leadfollow(&["validate", &path], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("followers[0].a") && err.contains("ragged"), "{err}");
}

#[test]
fn unknown_key_reports_its_location() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "typo.toml", |_| {});
    let text = fs::read_to_string(&path).unwrap().replace("[leader]", "[leader]\nspeed = 3");
    fs::write(&path, text).unwrap();
    let out = leadfollow(&["validate", &path], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("speed") && err.contains("line"), "{err}");
}

#[test]
fn run_formation_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = leadfollow(&["run", "--builtin", "formation-sec5", "--horizon", "300", "--out", "res"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}{}", stdout(&out), stderr(&out));
    assert!(stdout(&out).contains("converged"));

    let res = dir.path().join("res");
    let csv = fs::read_to_string(res.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 302, "header plus 301 rows");

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(res.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["convergence"]["all_converged"], true);
    assert_eq!(report["controllers"].as_array().unwrap().len(), 4);

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(res.join("manifest.json")).unwrap()).unwrap();
    let artifacts: Vec<&str> = manifest["artifacts"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    for name in ["trajectory.csv", "report.json", "manifest.json"] {
        assert_eq!(artifacts.iter().filter(|a| a.ends_with(name)).count(), 1, "{name}");
    }
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["assumptions"].as_array().unwrap().len(), 4);
}

#[test]
fn run_formation_with_adaptive_observer_converges() {
    let dir = tempfile::tempdir().unwrap();
    let out = leadfollow(&["run", "--builtin", "formation-sec5", "--mode", "adaptive", "--out", "res"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    let csv = fs::read_to_string(dir.path().join("res/trajectory.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains("shat_1_0"));
}

#[test]
fn horizon_zero_logs_only_the_initial_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = leadfollow(&["run", "--builtin", "single-follower", "--horizon", "0", "--out", "res"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("no convergence claims"));
    let csv = fs::read_to_string(dir.path().join("res/trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn failed_validation_blocks_run_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), "unstable.toml", |c| {
        c.leader.s = vec![vec![1.5, 0.0], vec![0.0, 1.5]];
    });
    let blocked = leadfollow(&["run", &path, "--out", "a"], dir.path());
    assert_eq!(blocked.status.code(), Some(2));
    assert!(stderr(&blocked).contains("--force"));
    assert!(!dir.path().join("a").exists());

    // the leader grows like 1.5^t and trips the overflow guard
    let forced = leadfollow(&["run", &path, "--out", "b", "--force"], dir.path());
    assert_eq!(forced.status.code(), Some(2));
    let err = stderr(&forced);
    assert!(err.contains("exceeded 1e12 at t = "), "{err}");
}

#[test]
fn seeded_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for d in ["a", "b"] {
        leadfollow(&["run", "--builtin", "default-fig2", "--seed", "9", "--horizon", "50", "--out", d], dir.path());
    }
    let a = fs::read(dir.path().join("a/trajectory.csv")).unwrap();
    let b = fs::read(dir.path().join("b/trajectory.csv")).unwrap();
    assert_eq!(a, b);
    leadfollow(&["run", "--builtin", "default-fig2", "--seed", "10", "--horizon", "50", "--out", "c"], dir.path());
    assert_ne!(a, fs::read(dir.path().join("c/trajectory.csv")).unwrap());
}

#[test]
fn props_kron_and_lemma2() {
    let dir = tempfile::tempdir().unwrap();
    let out = leadfollow(&["props", "kron", "--trials", "50", "--json", "kron.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("kron.json")).unwrap()).unwrap();
    let trials = report["trials"].as_array().unwrap();
    assert_eq!(trials.len(), 50);
    assert!(trials.iter().all(|t| t["metric"].as_f64().unwrap() < 1e-9));

    let out = leadfollow(&["props", "lemma2", "--trials", "20"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let passes = stdout(&out).lines().filter(|l| l.contains(" PASS ") && !l.starts_with("lemma2")).count();
    assert_eq!(passes, 21, "20 trials plus the witness");
}

#[test]
fn props_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let out = leadfollow(&["props", "consensus", "--trials", "0"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("warning"));

    let out = leadfollow(&["props", "lemma7"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("unknown suite"));
}

#[test]
fn list_builtins_names_all_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = stdout(&leadfollow(&["list-builtins"], dir.path()));
    for name in ["formation-sec5", "single-follower", "default-fig2"] {
        assert!(text.contains(name));
    }
}

#[test]
fn bundled_config_files_match_the_builtins() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    for (name, _) in leadfollow::scenarios::BUILTINS {
        let path = dir.join(format!("{name}.toml"));
        let loaded = ScenarioConfig::load(&path).unwrap().to_scenario().unwrap();
        assert_eq!(loaded, builtin(name).unwrap(), "{name}");
        let out = leadfollow(&["validate", path.to_str().unwrap()], &dir);
        assert_eq!(out.status.code(), Some(0), "{name}");
    }
}
