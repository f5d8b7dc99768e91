use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const HEADER: &str =
    "env_step,episode_reward,best_reward,avg_batch_reward,q_loss,policy_kl,kl_to_ref";

fn toksoft(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_toksoft"))
        .current_dir(dir)
        .env_remove("TOKSOFT_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn train_writes_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let o = toksoft(
        dir.path(),
        &[
            "train", "--env", "expr", "--algo", "etpo", "--seed", "0", "--steps", "500", "--out",
            "run0.csv",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("run0.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(HEADER));
    assert_eq!(lines.count(), 500);
}

#[test]
fn out_dir_variable_redirects_output() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("elsewhere");
    let o = Command::new(env!("CARGO_BIN_EXE_toksoft"))
        .current_dir(dir.path())
        .env("TOKSOFT_OUT_DIR", &target)
        .args([
            "train",
            "--env",
            "tabular",
            "--steps",
            "20",
            "--out",
            "sub/r.csv",
        ])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(target.join("r.csv").exists());
    assert!(!dir.path().join("sub/r.csv").exists());
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.cfg"),
        "# tiny\nenv = tabular\nsteps = 30\nalgo = ppo_kl\n",
    )
    .unwrap();
    let o = toksoft(
        dir.path(),
        &[
            "train",
            "--config",
            "c.cfg",
            "--steps",
            "12",
            "--mode",
            "parametric",
            "--set",
            "hidden=4",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("ppo_kl 12 steps"));
    assert_eq!(
        fs::read_to_string(dir.path().join("run.csv"))
            .unwrap()
            .lines()
            .count(),
        13
    );
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["train", "--beta", "-1"],
        vec!["train", "--algo", "nope"],
        vec!["train", "--config", "missing.cfg"],
        vec!["train", "--bogus-flag"],
        vec!["train", "--env", "expr", "--algo", "oracle", "--steps", "3"],
    ] {
        let o = toksoft(dir.path(), &args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn sweep_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = toksoft(
        dir.path(),
        &[
            "sweep",
            "--seeds",
            "5",
            "--algos",
            "etpo,ppo_kl",
            "--env",
            "tabular",
            "--steps",
            "60",
            "--out",
            "sw",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sw = dir.path().join("sw");
    let csvs = fs::read_dir(&sw)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "csv")
        })
        .count();
    assert_eq!(csvs, 10);
    let summary = fs::read_to_string(sw.join("summary.txt")).unwrap();
    assert!(
        summary.contains("etpo_b1 ") && summary.contains("ppo_kl_b1 "),
        "{summary}"
    );

    let o = toksoft(dir.path(), &["report", "sw"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), summary);

    // sweeping is deterministic per job
    let o = toksoft(
        dir.path(),
        &[
            "train", "--env", "tabular", "--steps", "60", "--algo", "etpo", "--seed", "2", "--out",
            "one.csv",
        ],
    );
    assert!(o.status.success());
    assert_eq!(
        fs::read(dir.path().join("one.csv")).unwrap(),
        fs::read(sw.join("etpo_b1_s2.csv")).unwrap()
    );
}

#[test]
fn report_single_run_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    assert!(toksoft(
        dir.path(),
        &["train", "--env", "tabular", "--steps", "10", "--out", "a_s0.csv"]
    )
    .status
    .success());
    let o = toksoft(dir.path(), &["report", "a_s0.csv"]);
    assert!(stdout(&o).contains("(single run)"));
    assert_eq!(
        toksoft(dir.path(), &["report", "nothing.csv"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn verify_prints_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = toksoft(dir.path(), &["verify", "--instances", "100", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(
        out.lines()
            .last()
            .unwrap()
            .starts_with("PASS max_residual="),
        "{out}"
    );
    assert!(out.contains("PASS disc_witness"));
}

#[test]
fn checkpoints_follow_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = toksoft(
        dir.path(),
        &[
            "train",
            "--env",
            "tabular",
            "--steps",
            "20",
            "--set",
            "checkpoint_every=10",
            "--out",
            "ck/run.csv",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("ck/checkpoint_10.txt").exists());
    assert!(dir.path().join("ck/checkpoint_20.txt").exists());
}

#[test]
fn verify_failure_exits_two_and_saves_instances() {
    let dir = tempfile::tempdir().unwrap();
    let o = toksoft(
        dir.path(),
        &[
            "verify",
            "--instances",
            "5",
            "--fixed-point-instances",
            "1",
            "--within-discount",
            "0.99",
            "--out",
            "fails",
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("FAIL within_action"));
    let saved: Vec<_> = fs::read_dir(dir.path().join("fails")).unwrap().collect();
    assert!(!saved.is_empty());
    let first = saved[0].as_ref().unwrap().path();
    assert!(fs::read_to_string(first)
        .unwrap()
        .starts_with("# toksoft tabular env spec"));
}
