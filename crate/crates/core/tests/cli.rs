//! The `eta` binary end to end: artifacts, determinism and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn eta(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eta"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = eta(dir, args);
    assert!(
        out.status.success(),
        "eta {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TINY: [&str; 10] = [
    "--set",
    "model.dim=8",
    "--set",
    "model.heads=2",
    "--set",
    "model.large_depth=3",
    "--set",
    "train.steps=5",
    "--set",
    "train.batch_size=4",
];

fn header(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path).unwrap();
    serde_json::from_str(text.lines().next().unwrap()).unwrap()
}

#[test]
fn collect_train_eval_replay_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let said = ok(
        d,
        &[
            "collect",
            "--scenarios",
            "hard_brake",
            "--episodes",
            "2",
            "--seed",
            "3",
            "--out",
            "data.etad",
        ],
    );
    assert!(said.contains("from 2 episodes"), "{said}");
    assert!(d.join("data.etad.config.toml").exists());

    let train = |out: &str, extra: &[&str]| {
        let mut args = vec!["train", "--data", "data.etad", "--seed", "3", "--out", out];
        args.extend_from_slice(extra);
        ok(d, &args);
    };
    train("a.ckpt", &TINY);
    train("b.ckpt", &TINY);
    let a = std::fs::read(d.join("a.ckpt")).unwrap();
    assert_eq!(
        a,
        std::fs::read(d.join("b.ckpt")).unwrap(),
        "same config and seed, different checkpoint"
    );

    // The emitted config reproduces the run without the overrides.
    train("c.ckpt", &["--config", "a.ckpt.config.toml"]);
    assert_eq!(a, std::fs::read(d.join("c.ckpt")).unwrap());

    let h = header(&d.join("a.ckpt.loss.jsonl"));
    assert_eq!(h["type"], "header");
    assert_eq!(h["seed"], 3);
    assert_eq!(h["config_hash"].as_str().unwrap().len(), 64);

    let eval_set = ["--set", "eval.episodes=1", "--set", "eval.kinds=[\"hard_brake\"]"];
    let mut args = vec![
        "eval",
        "--checkpoints",
        "a.ckpt",
        "--seed",
        "3",
        "--logs",
        "logs",
        "--out",
        "eval.jsonl",
    ];
    args.extend_from_slice(&eval_set);
    let table = ok(d, &args);
    assert!(table.contains("hard_brake"), "{table}");
    assert_eq!(header(&d.join("eval.jsonl"))["command"], "eval");
    let logs: Vec<_> = std::fs::read_dir(d.join("logs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(logs.len(), 1);

    let frames = ok(d, &["replay", logs[0].to_str().unwrap(), "--show-mask", "--to", "2"]);
    assert!(frames.contains("replay matches the log"), "{frames}");
    assert!(frames.contains("tick 1 ") && !frames.contains("tick 2 "));

    let summary = ok(d, &["report", "a.ckpt.loss.jsonl", "eval.jsonl"]);
    assert!(!summary.is_empty());
}

#[test]
fn expert_eval_succeeds_and_writes_replayable_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "eval",
            "--expert",
            "--seed",
            "1",
            "--set",
            "eval.episodes=5",
            "--logs",
            "logs",
            "--out",
            "expert.jsonl",
        ],
    );
    let text = std::fs::read_to_string(d.join("expert.jsonl")).unwrap();
    let report: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(report["success_rate"]["mean"], 100.0);
    for log in std::fs::read_dir(d.join("logs")).unwrap() {
        ok(d, &["replay", log.unwrap().path().to_str().unwrap(), "--to", "1"]);
    }
}

#[test]
fn exit_codes_separate_usage_from_domain_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let code = |args: &[&str]| eta(d, args).status.code();
    assert_eq!(code(&["bench", "--set", "schedule.tick_mss=50"]), Some(2));
    assert_eq!(code(&["bench", "--set", "schedule.delta_ms=30"]), Some(2));
    assert_eq!(code(&["frobnicate"]), Some(2));
    assert_eq!(code(&["collect"]), Some(2), "missing --out");
    assert_eq!(
        code(&["train", "--kind", "base", "--mode", "full", "--data", "x", "--out", "y"]),
        Some(2)
    );
    assert_eq!(code(&["bench", "--mode", "base", "--ticks", "100"]), Some(1));
    assert_eq!(code(&["eval", "--checkpoints", "missing.ckpt"]), Some(1));
    assert_eq!(code(&["bench", "--ticks", "100"]), Some(0));
}
