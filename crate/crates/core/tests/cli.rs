use std::path::Path;
use std::process::{Command, Output};

fn spo_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spo-lab"))
        .args(args)
        .env_remove("SPO_LAB_JOBS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    v.sort();
    v
}

#[test]
fn list_scenarios_shows_every_id() {
    let out = spo_lab(&["list-scenarios"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for id in ["subpopulation-mw", "gap-condition", "rps-bandit", "nonmarkov-rm", "pointnav-spo"] {
        assert!(text.contains(id), "{id}");
    }
    assert!(text.contains("rps-selfplay"));
}

#[test]
fn run_writes_one_csv_per_seed_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("rps.toml");
    std::fs::write(&cfg, "scenario = \"rps-selfplay\"\nrounds = 20000\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = spo_lab(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("PASS"));
    let files = csv_files(&out_dir);
    assert_eq!(files.len(), 10, "{files:?}");
    let first = std::fs::read_to_string(out_dir.join(&files[0])).unwrap();
    assert!(first.starts_with("run_id,seed,t,digest,exploitability,"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["scenario"], "rps-bandit");
    assert_eq!(summary["rounds"], 20000);
    assert_eq!(summary["check"]["passed"], true);
    let m = &summary["metrics"]["l1_to_mw"];
    assert!(m["stderr"].as_f64().unwrap() >= 0.0);
}

#[test]
fn seed_override_changes_the_runs() {
    let dir = tempfile::tempdir().unwrap();
    let read = |seed: &str| {
        let out_dir = dir.path().join(seed);
        let out = spo_lab(&["verify", "subpopulation-mw", "--seed", seed, "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success());
        std::fs::read(out_dir.join(&csv_files(&out_dir)[0])).unwrap()
    };
    assert_ne!(read("1"), read("2"));
}

#[test]
fn dpo_scenario_writes_a_single_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = spo_lab(&["verify", "dpo-counterexample", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(csv_files(dir.path()).len(), 1);
}

#[test]
fn failed_check_exits_with_one() {
    // far too few rounds for the fast-rate check
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gap.toml");
    std::fs::write(&cfg, "scenario = \"gap-condition\"\nrounds = 1000\n").unwrap();
    let out = spo_lab(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "scenario = \"gap-condition\"\nroundz = 10\n").unwrap();
    let out = spo_lab(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("roundz"));
}

#[test]
fn solve_prints_the_minimax_winner() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    std::fs::write(&path, r#"{"n": 3, "entries": [[0, 0.4, -1], [-0.4, 0, 1], [1, -1, 0]]}"#).unwrap();
    let out = spo_lab(&["solve", "--matrix", path.to_str().unwrap()]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v["value"].as_f64().unwrap().abs() < 1e-12);
    let text = stdout(&out);
    assert!(text.contains("0.4166666666666667") || text.contains("0.41666666666666669"), "{text}");

    let asym = dir.path().join("bad.json");
    std::fs::write(&asym, r#"{"n": 2, "entries": [[0, 0.5], [0.5, 0]]}"#).unwrap();
    assert_eq!(spo_lab(&["solve", "--matrix", asym.to_str().unwrap()]).status.code(), Some(2));
}
