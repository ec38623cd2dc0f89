//! End-to-end checks of the command-line interface: artifacts, exit
//! codes, config resolution, and determinism of generated files.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualsub"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn gen_small(dir: &Path) -> String {
    let data = dir.join("data");
    let s = data.to_str().unwrap().to_string();
    stdout(&run(&[
        "gen-synth", "--out", &s, "--classes", "12", "--samples-per-class", "8",
        "--channels", "4", "--height", "4", "--width", "4",
    ]));
    s
}

#[test]
fn gen_synth_writes_deterministic_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        stdout(&run(&["gen-synth", "--out", out.to_str().unwrap(), "--classes", "8"]));
    }
    for name in ["base.fts", "val.fts", "novel.fts", "manifest.txt"] {
        assert!(a.join(name).is_file(), "{name} missing");
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name} differs between identical seeds"
        );
    }
}

#[test]
fn gen_synth_rejects_unsplittable_class_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gen-synth", "--out", dir.path().to_str().unwrap(), "--classes", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty split"));
}

#[test]
fn eval_echoes_config_and_honors_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path());
    let cfg_path = dir.path().join("run.cfg");
    std::fs::write(&cfg_path, "way=3\nshot=1\nepisodes=10\nquery=4\nseed=9\n").unwrap();
    // flag overrides the file entry for seed; the rest comes from the file
    let text = stdout(&run(&[
        "eval", "--data", &data, "--config", cfg_path.to_str().unwrap(), "--seed", "5",
    ]));
    for line in ["command=eval", "way=3", "shot=1", "episodes=10", "seed=5", "phase=novel"] {
        assert!(text.contains(line), "missing {line:?} in:\n{text}");
    }
    assert!(text.contains("mean_accuracy="));
    assert!(text.contains("ci95="));
}

#[test]
fn eval_writes_per_episode_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path());
    let csv = dir.path().join("eps.csv");
    stdout(&run(&[
        "eval", "--data", &data, "--way", "3", "--shot", "1", "--query", "4",
        "--episodes", "6", "--csv", csv.to_str().unwrap(),
    ]));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("episode,accuracy"));
    assert_eq!(lines.count(), 6);
}

#[test]
fn train_then_eval_does_not_regress() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path());
    let params = dir.path().join("params.bin");
    let trace = dir.path().join("trace.csv");
    let common = ["--way", "3", "--shot", "1", "--query", "4"];
    let mut train_args = vec![
        "train", "--data", &data, "--out", params.to_str().unwrap(),
        "--trace", trace.to_str().unwrap(), "--steps", "15",
    ];
    train_args.extend_from_slice(&common);
    stdout(&run(&train_args));
    let trace_text = std::fs::read_to_string(&trace).unwrap();
    assert!(trace_text.starts_with("step,l_cls,l_disc,l_total\n"));
    assert_eq!(trace_text.lines().count(), 16);

    let mut base_args = vec!["eval", "--data", &data, "--episodes", "60"];
    base_args.extend_from_slice(&common);
    let mut trained_args = base_args.clone();
    trained_args.extend_from_slice(&["--params", params.to_str().unwrap()]);
    let grab = |text: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix("mean_accuracy=").map(str::to_string))
            .unwrap()
            .parse()
            .unwrap()
    };
    let untrained = grab(&stdout(&run(&base_args)));
    let trained = grab(&stdout(&run(&trained_args)));
    assert!(
        trained >= untrained,
        "training regressed accuracy: {untrained} -> {trained}"
    );
}

#[test]
fn train_zero_lr_keeps_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path());
    let p1 = dir.path().join("p1.bin");
    let p2 = dir.path().join("p2.bin");
    // lr=0 must be a no-op on the parameters regardless of step count
    for (p, steps) in [(&p1, "1"), (&p2, "5")] {
        stdout(&run(&[
            "train", "--data", &data, "--out", p.to_str().unwrap(),
            "--way", "3", "--shot", "1", "--query", "4", "--steps", steps, "--lr", "0",
        ]));
    }
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn ablate_lists_all_variants_and_v0_matches_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path());
    let common = ["--way", "3", "--shot", "1", "--query", "4", "--episodes", "20"];
    let mut ablate_args = vec!["ablate", "--data", &data];
    ablate_args.extend_from_slice(&common);
    let table = stdout(&run(&ablate_args));
    for v in ["V0", "V1", "V2", "V3"] {
        assert!(table.contains(v), "missing {v} row:\n{table}");
    }
    let v0_row: Vec<String> = table
        .lines()
        .find(|l| l.starts_with("V0"))
        .unwrap()
        .split_whitespace()
        .map(str::to_string)
        .collect();
    let mut eval_args = vec!["eval", "--data", &data, "--variant", "V0"];
    eval_args.extend_from_slice(&common);
    let eval_text = stdout(&run(&eval_args));
    let mean = eval_text
        .lines()
        .find_map(|l| l.strip_prefix("mean_accuracy="))
        .unwrap();
    assert_eq!(v0_row[1], mean, "ablate V0 row disagrees with spatial-only eval");
}

#[test]
fn selftest_passes_and_invalid_flags_exit_1() {
    let out = run(&["selftest"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("all 8 checks passed"));

    let dir = tempfile::tempdir().unwrap();
    let data = gen_small(dir.path());
    let bad_tau = run(&["eval", "--data", &data, "--tau", "1.5"]);
    assert_eq!(bad_tau.status.code(), Some(1));
    let missing = run(&["eval", "--data", "/nonexistent/dataset"]);
    assert_eq!(missing.status.code(), Some(1));
}
