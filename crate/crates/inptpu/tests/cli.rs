//! End-to-end tests of the `inptpu` binary: dataset synthesis, two-stage
//! training with resume, reenactment, and evaluation.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_inptpu"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesizes a tiny dataset shared by the heavier commands.
fn tiny_dataset(root: &Path) {
    let out = run(&[
        "synth",
        "--n",
        "5",
        "--out",
        path_str(root),
        "--seed",
        "3",
        "--ratio",
        "0.6",
        "--frames",
        "4",
        "--canvas",
        "32",
    ]);
    assert_ok(&out);
}

/// A run config small enough for test-time training.
fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("cfg.json");
    std::fs::write(
        &path,
        r#"{
  "model": {
    "depth": 1,
    "d_model": 32,
    "heads": 2,
    "mlp_ratio": 2,
    "patch": { "t": 1, "h": 2, "w": 2 },
    "max_grid": [4, 4, 8],
    "latent_channels": 48
  },
  "train": { "batch": 2, "lr": 0.001, "steps": 6, "seed": 5 },
  "clip_length": 4,
  "sample_steps": 2
}"#,
    )
    .unwrap();
    path
}

#[test]
fn synth_writes_manifest_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for root in [&a, &b] {
        let out = run(&[
            "synth", "--n", "10", "--out", path_str(root), "--seed", "7", "--frames", "3",
            "--canvas", "32",
        ]);
        assert_ok(&out);
    }
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["train"].as_array().unwrap().len(), 8);
    assert_eq!(m["test"].as_array().unwrap().len(), 2);
    // byte-identical across reruns
    let fa = std::fs::read(a.join("train/clip_0002/frames/00001.png")).unwrap();
    let fb = std::fs::read(b.join("train/clip_0002/frames/00001.png")).unwrap();
    assert_eq!(fa, fb);
}

#[test]
fn synth_rejects_single_clip_with_usage_exit() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--n", "1", "--out", path_str(dir.path()), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_smoke_writes_loss_rows_and_resume_matches_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    tiny_dataset(&data);
    let cfg = tiny_config(dir.path());

    // straight 12-step run
    let straight = dir.path().join("straight");
    let out = run(&[
        "train", "--stage", "keyframe", "--data", path_str(&data), "--out",
        path_str(&straight), "--config", path_str(&cfg), "--steps", "12",
    ]);
    assert_ok(&out);
    let straight_losses = std::fs::read_to_string(straight.join("loss.csv")).unwrap();
    assert_eq!(straight_losses.lines().count(), 13); // header + 12 rows

    // 6 steps, then resume to 12
    let resumed = dir.path().join("resumed");
    let out = run(&[
        "train", "--stage", "keyframe", "--data", path_str(&data), "--out",
        path_str(&resumed), "--config", path_str(&cfg), "--steps", "6",
    ]);
    assert_ok(&out);
    assert_eq!(
        std::fs::read_to_string(resumed.join("loss.csv")).unwrap().lines().count(),
        7
    );
    let out = run(&[
        "train", "--stage", "keyframe", "--data", path_str(&data), "--out",
        path_str(&resumed), "--steps", "12", "--resume",
    ]);
    assert_ok(&out);

    assert_eq!(
        std::fs::read_to_string(resumed.join("loss.csv")).unwrap(),
        straight_losses
    );
    assert_eq!(
        std::fs::read(resumed.join("params.bin")).unwrap(),
        std::fs::read(straight.join("params.bin")).unwrap()
    );
}

#[test]
fn train_without_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--stage",
        "keyframe",
        "--data",
        path_str(&dir.path().join("missing")),
        "--out",
        path_str(&dir.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

/// Trains both tiny stages once for the reenact/eval tests.
fn train_both_stages(dir: &Path, data: &Path) -> (PathBuf, PathBuf) {
    let cfg = tiny_config(dir);
    let img = dir.join("ckpt_img");
    let vid = dir.join("ckpt_vid");
    let out = run(&[
        "train", "--stage", "keyframe", "--data", path_str(data), "--out", path_str(&img),
        "--config", path_str(&cfg), "--steps", "2",
    ]);
    assert_ok(&out);
    let out = run(&[
        "train", "--stage", "video", "--data", path_str(data), "--out", path_str(&vid),
        "--config", path_str(&cfg), "--steps", "2",
    ]);
    assert_ok(&out);
    (img, vid)
}

#[test]
fn reenact_and_eval_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    tiny_dataset(&data);
    let (img, vid) = train_both_stages(dir.path(), &data);

    let clip = data.join("test/clip_0000");
    let run_dir = dir.path().join("run/clip_0000");
    let out = run(&[
        "reenact",
        "--source-dir",
        path_str(&clip.join("frames")),
        "--mask-dir",
        path_str(&clip.join("masks")),
        "--reference",
        path_str(&clip.join("reference.png")),
        "--mode",
        "self",
        "--seed",
        "4",
        "--clip-length",
        "4",
        "--ckpt-img",
        path_str(&img),
        "--ckpt-vid",
        path_str(&vid),
        "--out",
        path_str(&run_dir),
    ]);
    assert_ok(&out);
    let frames: Vec<_> = std::fs::read_dir(&run_dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().map(|x| x == "png").unwrap_or(false))
        .collect();
    assert_eq!(frames.len(), 4);
    assert!(run_dir.join("job.json").is_file());

    // chained: 3 clips of 2 frames from a 4-frame source -> 3*(2-1)+1 = 4
    let chained = dir.path().join("run/chained");
    let out = run(&[
        "reenact", "--source-dir", path_str(&clip.join("frames")), "--mask-dir",
        path_str(&clip.join("masks")), "--reference", path_str(&clip.join("reference.png")),
        "--mode", "self", "--seed", "4", "--clip-length", "2", "--clips", "3",
        "--ckpt-img", path_str(&img), "--ckpt-vid", path_str(&vid), "--out",
        path_str(&chained),
    ]);
    assert_ok(&out);
    let n = std::fs::read_dir(&chained)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().map(|x| x == "png").unwrap_or(false))
        .count();
    assert_eq!(n, 4);

    // cross mode with an unseen test sprite completes (coverage asserted inside)
    let donor = data.join("test/clip_0001");
    let cross_dir = dir.path().join("run/cross");
    let out = run(&[
        "reenact", "--source-dir", path_str(&clip.join("frames")), "--mask-dir",
        path_str(&clip.join("masks")), "--reference",
        path_str(&donor.join("reference.png")), "--mode", "cross", "--seed", "4",
        "--clip-length", "4", "--ckpt-img", path_str(&img), "--ckpt-vid", path_str(&vid),
        "--out", path_str(&cross_dir),
    ]);
    assert_ok(&out);

    // eval the self-run against dataset ground truth
    let out = run(&[
        "eval",
        "--run",
        path_str(&run_dir),
        "--gt",
        path_str(&clip),
        "--masks",
        path_str(&clip),
    ]);
    assert_ok(&out);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("report.json")).unwrap())
            .unwrap();
    for key in ["mean_psnr_db", "mean_subject_consistency", "mean_motion_smoothness"] {
        assert!(report[key].is_number(), "missing {key}");
    }
    assert!(run_dir.join("report.txt").is_file());
}

#[test]
fn eval_nonexistent_run_dir_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "eval",
        "--run",
        path_str(&dir.path().join("nope")),
        "--gt",
        path_str(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_exists_for_every_subcommand() {
    for cmd in ["synth", "train", "reenact", "eval"] {
        let out = run(&[cmd, "--help"]);
        assert_ok(&out);
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("--seed") || text.contains("--run"), "{cmd} help lacks flags");
    }
    let out = run(&["--help"]);
    assert_ok(&out);
}
