//! End-to-end checks of the command-line harness: exit codes, file
//! formats, and the expert → record → train → report pipeline at a tiny
//! scale.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn agail(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agail"))
        .args(args)
        .current_dir(dir)
        .env_remove("AGAIL_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn unknown_env_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = agail(
        &["expert", "--env", "lunarlander", "--out", "x.ckpt"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("lunarlander"));
}

#[test]
fn eta_out_of_range_is_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = agail(
        &[
            "expert", "--env", "cartpole", "--iterations", "1", "--out", "e.ckpt",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let out = agail(
        &[
            "record",
            "--checkpoint",
            "e.ckpt",
            "--env",
            "cartpole",
            "--episodes",
            "1",
            "--eta",
            "1.5",
            "--out",
            "d.txt",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn train_without_demos_fails_before_any_output() {
    let dir = TempDir::new().unwrap();
    let out = agail(
        &[
            "train", "--algo", "gail", "--env", "cartpole", "--iters", "1", "--out", "m.csv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(!dir.path().join("m.csv").exists());
}

#[test]
fn pipeline_produces_consistent_artifacts() {
    let dir = TempDir::new().unwrap();
    let run = |args: &[&str]| {
        let out = agail(args, dir.path());
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", stderr(&out));
        out
    };

    run(&[
        "expert", "--env", "cartpole", "--iterations", "2", "--out", "e.ckpt",
    ]);
    run(&[
        "record",
        "--checkpoint",
        "e.ckpt",
        "--env",
        "cartpole",
        "--episodes",
        "3",
        "--eta",
        "0.75",
        "--seed",
        "5",
        "--out",
        "d.txt",
    ]);

    let demo_text = fs::read_to_string(dir.path().join("d.txt")).unwrap();
    let header = demo_text.lines().next().unwrap();
    assert!(header.starts_with("AGAIL-DEMOS v1 env=cartpole eta=0.75"));
    // per trajectory, surviving slots = round(0.25 * length)
    for line in demo_text.lines().skip(1) {
        let actions = line.split('|').nth(1).unwrap().strip_prefix("A:").unwrap();
        let slots: Vec<&str> = actions.split(';').collect();
        let surviving = slots.iter().filter(|s| **s != "_").count();
        assert_eq!(surviving, (0.25 * slots.len() as f64).round() as usize);
    }

    let config = dir.path().join("run.cfg");
    fs::write(&config, "algo=agail\nenv=cartpole\neta=0.75\nbatch=300\niters=2\n").unwrap();
    let cfg = config.to_str().unwrap();
    run(&[
        "train", "--config", cfg, "--demos", "d.txt", "--seed", "0", "--out", "s0.csv",
    ]);
    run(&[
        "train", "--config", cfg, "--demos", "d.txt", "--seed", "1", "--out", "s1.csv",
    ]);

    let metrics = fs::read_to_string(dir.path().join("s0.csv")).unwrap();
    assert_eq!(
        metrics.lines().next().unwrap(),
        "iter,true_return,composed_reward,d_bce,q_nll,kl,entropy,seconds"
    );
    assert_eq!(metrics.lines().count(), 3);

    let manifest = fs::read_to_string(dir.path().join("s0.csv.manifest")).unwrap();
    assert!(manifest.contains("algo=agail"));
    assert!(manifest.contains("env=cartpole"));
    assert!(manifest.contains("demos_sha256="));

    let out = run(&["report", "s0.csv", "s1.csv", "--out", "plot.csv"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("final return over 2 runs"));
    let plot = fs::read_to_string(dir.path().join("plot.csv")).unwrap();
    assert_eq!(plot.lines().next().unwrap(), "iter,mean_return,std_return,n_seeds");
    assert_eq!(plot.lines().count(), 3);
}

#[test]
fn report_refuses_mixed_environments_via_manifests() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("b.cfg"), "batch=300\n").unwrap();
    let run = |args: &[&str]| {
        let out = agail(args, dir.path());
        assert_eq!(out.status.code(), Some(0), "{args:?}: {}", stderr(&out));
    };
    run(&[
        "train", "--algo", "trpo", "--env", "cartpole", "--iters", "1", "--seed", "0",
        "--config", "b.cfg", "--out", "cp.csv",
    ]);
    run(&[
        "train", "--algo", "trpo", "--env", "pointmass", "--iters", "1", "--seed", "0",
        "--config", "b.cfg", "--out", "pm.csv",
    ]);
    let out = agail(&["report", "cp.csv", "pm.csv"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn metrics_identical_up_to_wall_clock() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("b.cfg"), "batch=300\n").unwrap();
    for out in ["a.csv", "b.csv"] {
        let got = agail(
            &[
                "train", "--algo", "trpo", "--env", "cartpole", "--iters", "2", "--seed",
                "7", "--config", "b.cfg", "--out", out,
            ],
            dir.path(),
        );
        assert_eq!(got.status.code(), Some(0), "{}", stderr(&got));
    }
    let strip = |name: &str| {
        fs::read_to_string(dir.path().join(name))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
    };
    assert_eq!(strip("a.csv"), strip("b.csv"));
}

#[test]
fn out_dir_env_var_redirects_relative_outputs() {
    let dir = TempDir::new().unwrap();
    let out_root = dir.path().join("redirected");
    let got = Command::new(env!("CARGO_BIN_EXE_agail"))
        .args([
            "expert", "--env", "pointmass", "--iterations", "1", "--out", "e.ckpt",
        ])
        .current_dir(dir.path())
        .env("AGAIL_OUT_DIR", &out_root)
        .output()
        .unwrap();
    assert_eq!(got.status.code(), Some(0), "{}", stderr(&got));
    assert!(out_root.join("e.ckpt").exists());
    assert!(!dir.path().join("e.ckpt").exists());
}
