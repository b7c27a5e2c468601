use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use masterprint::eval::{render_table, CoverageReport};

const SMALL: &str = r#"{
  "trials": 1,
  "max_dict_size": 2,
  "per_print_generations": 5,
  "single_print_generations": 10,
  "fmr_levels": [0.01]
}"#;

fn masterprint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_masterprint")).args(args).env_remove("MASTERPRINT_OUT").output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_writes_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(masterprint(&["gen", &cfg, "--seed", "3", "--out", s(&a)]).status.code(), Some(0));
    assert_eq!(masterprint(&["gen", &cfg, "--seed", "3", "--out", s(&b)]).status.code(), Some(0));
    for f in ["gallery_train.json", "gallery_test.json", "generator.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(files, ["gallery_train.json", "gallery_test.json", "generator.json", "manifest.json"]);
    let g = masterprint::population::Gallery::from_json(&fs::read_to_string(a.join("gallery_train.json")).unwrap()).unwrap();
    assert_eq!(g.user_count(), 200);
}

#[test]
fn gen_missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = masterprint(&["gen", s(&dir.path().join("nope.json")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let cfg = write_config(dir.path(), "{\"trials\": \"many\"}");
    assert_eq!(masterprint(&["gen", &cfg, "--out", s(dir.path())]).status.code(), Some(2));
}

#[test]
fn run_all_strategies_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("run");
    let out = masterprint(&["run", "--config", &cfg, "--strategy", "all", "--trials", "1", "--out", s(&out_dir), "--save-dicts", "--trace", "-q"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());

    let csv = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    let report = CoverageReport::from_csv(&csv).unwrap();
    assert_eq!(report.rows.len(), 4);
    assert!(csv.starts_with("# masterprint coverage report"));
    assert!(csv.contains("# trial_seeds: "));
    assert!(out_dir.join("summary.csv").exists() && out_dir.join("table.txt").exists());
    assert_eq!(fs::read_dir(out_dir.join("dictionaries")).unwrap().count(), 4);
    assert_eq!(fs::read_dir(out_dir.join("trace")).unwrap().count(), 4);
    for f in fs::read_dir(out_dir.join("trace")).unwrap() {
        let text = fs::read_to_string(f.unwrap().path()).unwrap();
        assert!(text.starts_with("# masterprint coverage report"));
        assert!(text.contains("# dictionary: trial 0"));
    }
    assert!(csv.contains("# novelty_rank: "));
    assert!(fs::read_to_string(out_dir.join("table.txt")).unwrap().starts_with("# masterprint coverage report"));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_array().unwrap();
    let mut names: Vec<&str> = files.iter().map(|v| v.as_str().unwrap()).collect();
    let before = names.len();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), before);
    assert_eq!(before, 3 + 4 + 4 + 1);

    let rendered = masterprint(&["report", "--in", s(&out_dir.join("report.csv"))]);
    assert_eq!(rendered.status.code(), Some(0));
    assert_eq!(String::from_utf8(rendered.stdout).unwrap(), render_table(&report).unwrap());
}

#[test]
fn run_restricted_to_one_cell_group() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("run");
    let out = masterprint(&["run", "--config", &cfg, "--strategy", "novelty", "--fmr", "0.01", "--out", s(&out_dir), "-q"]);
    assert_eq!(out.status.code(), Some(0));
    let report = CoverageReport::from_csv(&fs::read_to_string(out_dir.join("report.csv")).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].strategy, masterprint::search::Strategy::Novelty);
}

#[test]
fn run_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = masterprint(&["run", "--config", &cfg, "--seed", "5", "--jobs", "2", "--out", s(d), "-q"]);
        assert_eq!(out.status.code(), Some(0));
    }
    for f in ["report.csv", "summary.csv", "table.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let target = dir.path().join("env-out");
    let out = Command::new(env!("CARGO_BIN_EXE_masterprint"))
        .args(["run", "--config", &cfg, "--strategy", "random", "-q"])
        .env("MASTERPRINT_OUT", &target)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(target.join("report.csv").exists());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("x");
    assert_eq!(masterprint(&["run", "--strategy", "deep", "--out", s(&out_dir)]).status.code(), Some(2));
    assert_eq!(masterprint(&["run", "--fmr", "2.0", "--out", s(&out_dir)]).status.code(), Some(2));
    assert_eq!(masterprint(&["run", "--trials", "zero"]).status.code(), Some(2));
    assert_eq!(masterprint(&["bogus"]).status.code(), Some(2));
}

#[test]
fn failing_trials_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"trials": 1, "gallery": {"user_count": 40, "impressions_per_user": 1}}"#);
    let out = masterprint(&["run", "--config", &cfg, "--out", s(&dir.path().join("r")), "-q"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(dir.path().join("r/report.csv").exists());
}

#[test]
fn report_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "this is not a report\n").unwrap();
    assert_eq!(masterprint(&["report", "--in", s(&bad)]).status.code(), Some(2));
    assert_eq!(masterprint(&["report", "--in", s(&dir.path().join("missing.csv"))]).status.code(), Some(2));

    let empty = dir.path().join("empty.csv");
    let text = CoverageReport { config: Default::default(), rows: vec![] }.to_csv().unwrap();
    fs::write(&empty, text).unwrap();
    let out = masterprint(&["report", "--in", s(&empty)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing to render"));
}
