//! End-to-end checks of the binary: the synth -> stats -> analyze ->
//! train -> eval pipeline, reproducibility of artifacts, and exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vis-causal"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("synth.toml");
    std::fs::write(
        &path,
        "train_videos = 6\n\
         dev_videos = 2\n\
         test_videos = 2\n\
         instances_per_video = 2\n\
         rule_groups = 2\n\
         group_size = 3\n\
         object_vocab_size = 16\n\
         distractor_vocab_size = 8\n\
         seed = 5\n",
    )
    .unwrap();
    path
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let data = dir.path().join("data.jsonl");

    let out = run(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
        "--out-dir",
        dir.path().join("synth").to_str().unwrap(),
    ]);
    assert_ok(&out);
    assert!(data.exists());
    assert!(dir.path().join("synth/manifest.json").exists());

    let out = run(&[
        "stats",
        "--data",
        data.to_str().unwrap(),
        "--out-dir",
        dir.path().join("stats").to_str().unwrap(),
    ]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("train"), "stats table: {stdout}");
    assert!(dir.path().join("stats/stats.json").exists());

    let out = run(&[
        "analyze",
        "--data",
        data.to_str().unwrap(),
        "--out-dir",
        dir.path().join("analyze").to_str().unwrap(),
    ]);
    assert_ok(&out);
    for file in [
        "analysis.txt",
        "analysis.json",
        "hist_with.csv",
        "hist_without.csv",
        "hist_diff.csv",
        "manifest.json",
    ] {
        assert!(dir.path().join("analyze").join(file).exists(), "{file}");
    }

    let train_dir = dir.path().join("train");
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--variant",
        "vcc",
        "--seed",
        "7",
        "--lr",
        "0.05",
        "--epochs",
        "2",
        "--dim",
        "4",
        "--hidden",
        "8",
        "--out-dir",
        train_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let checkpoint = train_dir.join("checkpoint.txt");
    assert!(checkpoint.exists());
    assert!(train_dir.join("train_log.jsonl").exists());
    let log = String::from_utf8(read(&train_dir.join("train_log.jsonl"))).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let entry: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["epoch", "train_loss", "dev_r1", "dev_r5", "dev_r10"] {
            assert!(entry.get(key).is_some(), "log key {key}");
        }
    }

    let eval_dir = dir.path().join("eval");
    let out = run(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        checkpoint.to_str().unwrap(),
        "--out-dir",
        eval_dir.to_str().unwrap(),
    ]);
    assert_ok(&out);
    assert!(eval_dir.join("report.txt").exists());
    assert!(eval_dir.join("report.jsonl").exists());
    assert!(eval_dir.join("manifest.json").exists());
    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&eval_dir.join("manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "eval");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn synth_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for out_file in [&a, &b] {
        let out = run(&[
            "synth",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_file.to_str().unwrap(),
            "--out-dir",
            dir.path().to_str().unwrap(),
        ]);
        assert_ok(&out);
    }
    assert_eq!(read(&a), read(&b));

    // A different seed changes the bytes.
    let c = dir.path().join("c.jsonl");
    let out = run(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "6",
        "--out",
        c.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_ok(&out);
    assert_ne!(read(&a), read(&c));
}

#[test]
fn train_and_eval_artifacts_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let data = dir.path().join("data.jsonl");
    assert_ok(&run(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]));

    let mut checkpoints = Vec::new();
    for name in ["t1", "t2"] {
        let out_dir = dir.path().join(name);
        assert_ok(&run(&[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--seed",
            "3",
            "--lr",
            "0.05",
            "--epochs",
            "2",
            "--dim",
            "4",
            "--hidden",
            "8",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]));
        checkpoints.push(read(&out_dir.join("checkpoint.txt")));
    }
    assert_eq!(checkpoints[0], checkpoints[1]);

    let mut reports = Vec::new();
    for name in ["e1", "e2"] {
        let out_dir = dir.path().join(name);
        assert_ok(&run(&[
            "eval",
            "--data",
            data.to_str().unwrap(),
            "--checkpoint",
            dir.path().join("t1/checkpoint.txt").to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]));
        reports.push((
            read(&out_dir.join("report.txt")),
            read(&out_dir.join("report.jsonl")),
        ));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn exported_scores_reproduce_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let data = dir.path().join("data.jsonl");
    assert_ok(&run(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]));
    let train_dir = dir.path().join("train");
    assert_ok(&run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--seed",
        "3",
        "--lr",
        "0.05",
        "--epochs",
        "1",
        "--dim",
        "4",
        "--hidden",
        "8",
        "--out-dir",
        train_dir.to_str().unwrap(),
    ]));

    let direct_dir = dir.path().join("direct");
    let scores = dir.path().join("scores.tsv");
    let sentences = dir.path().join("sentences.tsv");
    assert_ok(&run(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--checkpoint",
        train_dir.join("checkpoint.txt").to_str().unwrap(),
        "--export-scores",
        scores.to_str().unwrap(),
        "--export-sentences",
        sentences.to_str().unwrap(),
        "--out-dir",
        direct_dir.to_str().unwrap(),
    ]));

    let rescored_dir = dir.path().join("rescored");
    assert_ok(&run(&[
        "eval",
        "--data",
        data.to_str().unwrap(),
        "--scores",
        scores.to_str().unwrap(),
        "--out-dir",
        rescored_dir.to_str().unwrap(),
    ]));
    assert_eq!(
        read(&direct_dir.join("report.jsonl")),
        read(&rescored_dir.join("report.jsonl"))
    );

    let text = String::from_utf8(read(&sentences)).unwrap();
    let first = text.lines().next().expect("sentences exported");
    assert_eq!(first.split('\t').count(), 3);
    assert!(first.contains(", so "), "sentence format: {first}");
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();

    // Missing data file -> usage (2).
    let out = run(&[
        "train",
        "--data",
        dir.path().join("nope.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Out-of-range rho -> usage (2).
    let data = dir.path().join("d.jsonl");
    let out = run(&[
        "synth",
        "--rho",
        "1.5",
        "--out",
        data.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Malformed data -> validation (3).
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "#vis-causal-format v1\n{broken\n").unwrap();
    let out = run(&[
        "stats",
        "--data",
        bad.to_str().unwrap(),
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));

    // Bad flags -> clap usage (2).
    let out = run(&["eval", "--data", bad.to_str().unwrap(), "--split", "nope"]);
    assert_eq!(out.status.code(), Some(2));

    // eval needs exactly one source.
    let out = run(&["eval", "--data", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
