//! End-to-end tests of the `nore` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nore"))
}

fn write_config(dir: &Path) -> PathBuf {
    let out = dir.display().to_string();
    let text = format!(
        "[experiment]\n\
         profile = desk\n\
         seed = 9\n\
         episodes = 2\n\
         episode_length = 10\n\
         out_dir = {out}\n\
         \n\
         [planner]\n\
         planning_horizon = 3\n\
         candidates = 4\n\
         \n\
         [preferences]\n\
         imagination_steps = 3\n\
         \n\
         [pretrain]\n\
         rounds = 1\n\
         steps_per_round = 2\n"
    );
    let path = dir.join("test.conf");
    fs::write(&path, text).unwrap();
    path
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("nore_cli_{tag}"));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn pretrain_run_report_pipeline() {
    let dir = temp_dir("pipeline");
    let config = write_config(&dir);

    let out = bin().args(["pretrain", "--config"]).arg(&config).output().unwrap();
    assert!(out.status.success(), "pretrain failed: {out:?}");
    assert!(dir.join("checkpoint.json").exists());
    assert!(dir.join("checkpoint.bin").exists());

    let out = bin()
        .args(["run", "--mechanism", "pepper", "--reset-period", "5", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(out.status.success(), "run failed: {out:?}");
    assert!(dir.join("runs/pepper_p5/steps.csv").exists());

    let out = bin().args(["report", "--config"]).arg(&config).output().unwrap();
    assert!(out.status.success(), "report failed: {out:?}");
    let report = fs::read_to_string(dir.join("report.txt")).unwrap();
    assert!(report.contains("runs/pepper_p5/steps.csv"));
}

#[test]
fn missing_checkpoint_is_single_line_error() {
    let dir = temp_dir("missing");
    let config = write_config(&dir);
    let out = bin().args(["run", "--config"]).arg(&config).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = stderr.trim_end().lines().collect();
    assert_eq!(lines.len(), 1, "error must be a single line: {stderr:?}");
    assert!(lines[0].starts_with("error: "), "machine-parsable prefix: {stderr:?}");
    assert!(lines[0].contains("missing checkpoint"));
}

#[test]
fn bad_flags_are_rejected() {
    let out = bin().args(["run", "--mechanism", "dqn"]).output().unwrap();
    assert!(!out.status.success());
    let out = bin().args(["run", "--reset-period", "0"]).output().unwrap();
    assert!(!out.status.success());
    let out = bin().args(["pretrain", "--profile", "galaxy"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn unknown_config_key_fails_cleanly() {
    let dir = temp_dir("badkey");
    let path = dir.join("bad.conf");
    fs::write(&path, "[experiment]\nwarp_speed = 9\n").unwrap();
    let out = bin().args(["pretrain", "--config"]).arg(&path).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("warp_speed"), "error should name the key: {stderr}");
}
