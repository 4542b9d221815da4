//! Drives the `fedcot` binary end to end: commands, flags, exit codes, and
//! the FEDCOT_LOG environment variable.

use std::path::Path;
use std::process::{Command, Output};

const SMALL_CONFIG: &str = r#"
seed = 11
ranks = [2, 4]
feature_dim = 32
hidden_dim = 16
rounds = 2

[synth]
num_clients = 2
questions_per_client = 20
test_questions_per_client = 10
signal_dim = 4
"#;

fn fedcot(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fedcot"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn simulate_writes_artifacts_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let out = dir.path().join("run");
    let result = fedcot(
        &[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        &[("FEDCOT_LOG", "info")],
    );
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    assert!(out.join("metrics.csv").exists());
    assert!(out.join("report.json").exists());
    assert!(out.join("checkpoint.ckpt").exists());
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("round 1"), "info logging honors FEDCOT_LOG: {stderr}");

    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2, "header plus (round, client) rows");

    // Same config and seed: byte-identical metrics.
    let out2 = dir.path().join("run2");
    let result2 = fedcot(
        &[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out2.to_str().unwrap(),
        ],
        &[],
    );
    assert!(result2.status.success());
    assert_eq!(
        std::fs::read(out.join("metrics.csv")).unwrap(),
        std::fs::read(out2.join("metrics.csv")).unwrap()
    );

    // A different seed changes the trajectory.
    let out3 = dir.path().join("run3");
    let result3 = fedcot(
        &[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "12",
            "--out",
            out3.to_str().unwrap(),
        ],
        &[],
    );
    assert!(result3.status.success());
    assert_ne!(
        std::fs::read(out.join("metrics.csv")).unwrap(),
        std::fs::read(out3.join("metrics.csv")).unwrap()
    );
}

#[test]
fn simulate_resume_flag_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let full = dir.path().join("full");
    assert!(fedcot(
        &["simulate", "--config", config.to_str().unwrap(), "--out", full.to_str().unwrap()],
        &[],
    )
    .status
    .success());

    let short_cfg = dir.path().join("short.toml");
    std::fs::write(&short_cfg, SMALL_CONFIG.replace("rounds = 2", "rounds = 1")).unwrap();
    let short = dir.path().join("short");
    assert!(fedcot(
        &["simulate", "--config", short_cfg.to_str().unwrap(), "--out", short.to_str().unwrap()],
        &[],
    )
    .status
    .success());

    let resumed = dir.path().join("resumed");
    let result = fedcot(
        &[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            resumed.to_str().unwrap(),
            "--resume",
            short.join("checkpoint.ckpt").to_str().unwrap(),
        ],
        &[],
    );
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    assert_eq!(
        std::fs::read(full.join("checkpoint.ckpt")).unwrap(),
        std::fs::read(resumed.join("checkpoint.ckpt")).unwrap()
    );
}

#[test]
fn naive_mode_flag_with_heterogeneous_ranks_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let result = fedcot(
        &[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.path().join("x").to_str().unwrap(),
            "--mode",
            "naive",
        ],
        &[],
    );
    assert!(!result.status.success());
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("dimension mismatch"), "{stderr}");
}

#[test]
fn invalid_config_exits_nonzero_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "rounds = 0\n");
    let result = fedcot(&["simulate", "--config", config.to_str().unwrap()], &[]);
    assert!(!result.status.success());
    assert!(String::from_utf8_lossy(&result.stderr).contains("rounds"));
}

#[test]
fn generate_evaluate_and_compare_commands() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let corpus_dir = dir.path().join("corpus");
    let result = fedcot(
        &[
            "generate-synthetic",
            "--config",
            config.to_str().unwrap(),
            "--out",
            corpus_dir.to_str().unwrap(),
        ],
        &[],
    );
    assert!(result.status.success());
    let listed = String::from_utf8_lossy(&result.stdout);
    assert!(listed.contains("client0_train.jsonl"));
    assert!(corpus_dir.join("client1_test.jsonl").exists());

    let run_dir = dir.path().join("run");
    assert!(fedcot(
        &["simulate", "--config", config.to_str().unwrap(), "--out", run_dir.to_str().unwrap()],
        &[],
    )
    .status
    .success());

    let result = fedcot(
        &[
            "evaluate",
            "--checkpoint",
            run_dir.join("checkpoint.ckpt").to_str().unwrap(),
            "--corpus",
            corpus_dir.join("client0_test.jsonl").to_str().unwrap(),
            "--corpus",
            corpus_dir.join("client1_test.jsonl").to_str().unwrap(),
            "--out",
            dir.path().join("eval").to_str().unwrap(),
        ],
        &[],
    );
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("client0_test") && stdout.contains("client1_test"));
    assert!(dir.path().join("eval/evaluation.json").exists());

    let result = fedcot(
        &[
            "compare-aggregation",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.path().join("cmp").to_str().unwrap(),
        ],
        &[],
    );
    assert!(result.status.success());
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("stacking final mean accuracy"));
    assert!(stdout.contains("naive arm failed"), "{stdout}");
}
