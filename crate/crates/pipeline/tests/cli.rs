mod common;

use std::path::Path;
use std::process::{Command, Output};

use procopt::store::{self, RunDir, RunRecord, RunStatus};
use procopt::Stage;

fn procopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_procopt")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, config: &procopt::PipelineConfig) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, common::to_toml(config)).unwrap();
    path.display().to_string()
}

#[test]
fn stages_run_one_at_a_time_and_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let config = common::golden_config_path().display().to_string();
    let base = ["--config", config.as_str(), "--run-dir", run.to_str().unwrap()];

    let o = procopt(&[&base[..], &["clean"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = RunDir::new(&run);
    assert!(dir.exists(store::LEDGER));
    assert!(!dir.exists(store::CURVE));
    let record: RunRecord = dir.read_json(store::STATE).unwrap();
    assert_eq!(record.completed, vec![Stage::Ingest, Stage::Clean]);

    let o = procopt(&[&base[..], &["select"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.exists(store::CURVE));
    assert!(!dir.exists(store::MODEL));
}

#[test]
fn full_run_then_replay_reproduces_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let config = common::golden_config_path().display().to_string();
    let base = ["--config", config.as_str(), "--seed", "3", "--run-dir", run.to_str().unwrap()];

    let o = procopt(&[&base[..], &["recipes"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let record: RunRecord = RunDir::new(&run).read_json(store::STATE).unwrap();
    assert_eq!(record.status, RunStatus::Done);
    assert_eq!(record.seed, 3);

    let o = procopt(&[&base[..], &["replay"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("byte for byte"));
}

#[test]
fn replay_detects_a_tampered_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let config = common::golden_config_path().display().to_string();
    let base = ["--config", config.as_str(), "--run-dir", run.to_str().unwrap()];
    assert!(procopt(&[&base[..], &["select"]].concat()).status.success());
    let curve = run.join(store::CURVE);
    let text = std::fs::read_to_string(&curve).unwrap();
    std::fs::write(&curve, text.replacen("\"chosen_k\"", "\"chosen_k\" ", 1)).unwrap();
    let o = procopt(&[&base[..], &["replay"]].concat());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(store::CURVE), "{}", stderr(&o));
}

#[test]
fn k_max_zero_is_a_validation_error_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = common::golden_config();
    config.selection.k_max = Some(0);
    let path = write_config(tmp.path(), &config);
    let run = tmp.path().join("run");
    let o = procopt(&["--config", &path, "--run-dir", run.to_str().unwrap(), "recipes"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("k_max"), "{}", stderr(&o));
    assert!(!run.exists());
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(procopt(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(procopt(&["clean"]).status.code(), Some(1));
    let o = procopt(&["--config", "/nonexistent/config.toml", "clean"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(procopt(&["--help"]).status.code(), Some(0));
}

#[test]
fn stage_failure_exits_with_two_and_keeps_partial_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = common::golden_config();
    config.surrogate.screening.min_r2_test = 0.99999;
    let path = write_config(tmp.path(), &config);
    let run = tmp.path().join("run");
    let o = procopt(&["--config", &path, "--run-dir", run.to_str().unwrap(), "recipes"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let dir = RunDir::new(&run);
    let record: RunRecord = dir.read_json(store::STATE).unwrap();
    assert_eq!(record.status, RunStatus::Failed);
    let failure = record.error.unwrap();
    assert_eq!(failure.stage, Stage::Train);
    assert!(failure.message.contains("screening"), "{}", failure.message);
    assert!(dir.exists(store::CURVE) && dir.exists(store::TRAINING));
    assert!(!dir.exists(store::MODEL));
}

#[test]
fn select_records_expert_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = common::golden_config();
    config.selection.await_overrides = true;
    let path = write_config(tmp.path(), &config);
    let run = tmp.path().join("run");
    let base = ["--config", path.as_str(), "--run-dir", run.to_str().unwrap()];

    let o = procopt(&[&base[..], &["train"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("waiting for expert overrides"));
    let dir = RunDir::new(&run);
    assert!(!dir.exists(store::MODEL));

    let o = procopt(&[&base[..], &["select", "--remove", "rotation", "--add", "aux_03"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let o = procopt(&[&base[..], &["train"]].concat());
    assert!(o.status.success(), "{}", stderr(&o));
    let selection: procopt::run::SelectionDoc = dir.read_json(store::SELECTION).unwrap();
    assert!(selection.features.contains(&"aux_03".to_string()));
    assert!(!selection.features.contains(&"rotation".to_string()));
    assert_eq!(selection.removed, vec!["rotation".to_string()]);

    let o = procopt(&[&base[..], &["select", "--add", "aux_04"]].concat());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("training"), "{}", stderr(&o));
}

#[test]
fn a_different_seed_in_the_same_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let config = common::golden_config_path().display().to_string();
    assert!(procopt(&["--config", &config, "--run-dir", run.to_str().unwrap(), "ingest"]).status.success());
    let o = procopt(&["--config", &config, "--seed", "9", "--run-dir", run.to_str().unwrap(), "ingest"]);
    assert_eq!(o.status.code(), Some(2));
}
