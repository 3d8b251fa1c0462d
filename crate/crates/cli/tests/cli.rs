//! End-to-end checks of the command-line surface against the shipped presets.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rlsched() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rlsched"))
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets").join(name)
}

fn run(mut cmd: Command) -> Output {
    cmd.output().expect("spawn rlsched")
}

fn stdout(output: &Output) -> String {
    assert!(
        output.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&output.stderr),
        String::from_utf8_lossy(&output.stdout)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn help_lists_all_subcommands() {
    let text = stdout(&run({
        let mut c = rlsched();
        c.arg("--help");
        c
    }));
    for sub in ["generate", "train", "evaluate", "compare"] {
        assert!(text.contains(sub), "--help missing `{sub}`:\n{text}");
    }
}

#[test]
fn unknown_flag_is_an_error() {
    let output = run({
        let mut c = rlsched();
        c.args(["train", "--config", "x.cfg", "--frobnicate"]);
        c
    });
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("--frobnicate"));
}

#[test]
fn generate_writes_the_requested_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("jobsets");
    let text = stdout(&run({
        let mut c = rlsched();
        c.args(["generate", "--config"])
            .arg(preset("toy.cfg"))
            .args(["--num-jobsets", "3", "--seed", "11", "--out-dir"])
            .arg(&out);
        c
    }));
    assert!(text.contains("3 jobset files"));
    for i in 0..3 {
        let path = out.join(format!("jobset_{i:04}.txt"));
        let body = std::fs::read_to_string(&path).unwrap();
        assert!(body.starts_with("jobset v1 d=1 cap=4"), "{body}");
    }
}

#[test]
fn train_evaluate_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");

    let text = stdout(&run({
        let mut c = rlsched();
        c.args(["train", "--config"])
            .arg(preset("toy.cfg"))
            .args(["--iterations", "5", "--seed", "3", "--out-dir"])
            .arg(&out);
        c
    }));
    assert!(text.contains("iter    5"), "{text}");

    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 6, "{metrics}"); // header + 5 rows
    assert!(metrics.starts_with("iteration,mean_total_reward,mean_slowdown,"));

    let checkpoint = out.join("checkpoint_iter000005.ckpt");
    assert!(checkpoint.exists());

    let text = stdout(&run({
        let mut c = rlsched();
        c.args(["evaluate", "--config"])
            .arg(preset("toy.cfg"))
            .args(["--seed", "3", "--num-jobsets", "4", "--checkpoint"])
            .arg(&checkpoint)
            .arg("--trace")
            .arg(dir.path().join("ep.trace"));
        c
    }));
    assert!(text.contains("mean slowdown"), "{text}");
    assert!(dir.path().join("ep.trace").exists());

    let text = stdout(&run({
        let mut c = rlsched();
        c.args(["compare", "--config"])
            .arg(preset("toy.cfg"))
            .args(["--seed", "3", "--num-jobsets", "4", "--out-dir"])
            .arg(&out)
            .arg("--checkpoint")
            .arg(&checkpoint);
        c
    }));
    for name in ["drl", "sjf", "packer", "random"] {
        assert!(text.contains(name), "{text}");
    }
    let csv = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(csv.starts_with("scheduler,mean_slowdown,std_slowdown,mean_reward,jobs_dropped"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn resume_appends_to_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    stdout(&run({
        let mut c = rlsched();
        c.args(["train", "--config"])
            .arg(preset("toy.cfg"))
            .args(["--iterations", "4", "--seed", "3", "--out-dir"])
            .arg(&out);
        c
    }));
    stdout(&run({
        let mut c = rlsched();
        c.args(["train", "--config"])
            .arg(preset("toy.cfg"))
            .args(["--iterations", "8", "--seed", "3", "--resume", "--out-dir"])
            .arg(&out);
        c
    }));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().collect();
    assert_eq!(rows.len(), 9);
    assert!(rows[4].starts_with("4,"));
    assert!(rows[5].starts_with("5,"), "resume must continue at the next iteration index");
}

#[test]
fn missing_config_fails_cleanly() {
    let output = run({
        let mut c = rlsched();
        c.args(["train", "--config", "/nonexistent/x.cfg"]);
        c
    });
    assert!(!output.status.success());
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(err.contains("x.cfg"), "{err}");
}
