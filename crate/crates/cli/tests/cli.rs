//! End-to-end runs of the installed binary: each test drives a subcommand
//! the way a user would and checks the exit code, the machine-readable
//! output, and the files left in the run directory.

use std::path::Path;
use std::process::{Command, Output};

fn textile() -> Command {
    Command::new(env!("CARGO_BIN_EXE_textile"))
}

fn stdout_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text
        .lines()
        .last()
        .expect("stdout should carry a JSON line");
    serde_json::from_str(line).expect("stdout line should be JSON")
}

fn stderr_error(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .expect("stderr error object");
    serde_json::from_str(line).expect("stderr line should be JSON")
}

/// Generates a small corpus and returns the run directory; the images are
/// reused as inputs by several tests.
fn small_corpus(root: &Path) -> std::path::PathBuf {
    let dir = root.join("corpus");
    let out = textile()
        .args([
            "gen-corpus",
            "--train-per-class",
            "2",
            "--val-per-class",
            "1",
        ])
        .args(["--test-per-class", "1", "--resolution", "32", "--seed", "5"])
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "gen-corpus failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    dir
}

#[test]
fn gen_corpus_writes_manifest_and_images() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = small_corpus(tmp.path());
    assert!(dir.join("manifest.csv").is_file());
    assert!(dir.join("manifest.json").is_file());
    assert!(dir.join("images/train_pos_0000.png").is_file());

    let out = textile()
        .args([
            "gen-corpus",
            "--train-per-class",
            "2",
            "--val-per-class",
            "1",
        ])
        .args(["--test-per-class", "1", "--resolution", "32", "--seed", "5"])
        .arg("--out")
        .arg(tmp.path().join("again"))
        .output()
        .unwrap();
    let summary = stdout_json(&out);
    assert_eq!(summary["images"], 8);
    assert_eq!(summary["positives"], 4);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "gen-corpus");
    assert_eq!(manifest["seed"], 5);
}

#[test]
fn align_reports_zero_for_axis_aligned_texture() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(tmp.path());
    let run = tmp.path().join("align");
    let out = textile()
        .arg("align")
        .arg("--image")
        .arg(corpus.join("images/train_pos_0000.png"))
        .args([
            "--scorer",
            "oracle",
            "--min-deg",
            "-6",
            "--max-deg",
            "6",
            "--step-deg",
            "3",
        ])
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(stdout_json(&out)["best_theta_deg"], 0.0);
    let curve = std::fs::read_to_string(run.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 6, "header plus five grid angles");
    assert!(run.join("curve.png").is_file());
    assert!(run.join("aligned.png").is_file());
    assert!(run.join("manifest.json").is_file());
}

#[test]
fn repeat_prefers_the_full_wrap_equal_extent() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(tmp.path());
    let run = tmp.path().join("repeat");
    let out = textile()
        .arg("repeat")
        .arg("--image")
        .arg(corpus.join("images/train_pos_0001.png"))
        .args(["--scorer", "oracle", "--min-size", "16", "--step", "8"])
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    // the only wrap-equal candidate on the 16/24/32 grid is the image itself
    assert_eq!(stdout_json(&out)["best_height"], 32);
    assert!(run.join("surface.csv").is_file());
    assert!(run.join("surface.png").is_file());
    assert!(run.join("patch.png").is_file());
}

#[test]
fn synth_writes_image_and_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(tmp.path());
    let run = tmp.path().join("synth");
    let out = textile()
        .arg("synth")
        .arg("--exemplar")
        .arg(corpus.join("images/train_pos_0000.png"))
        .args([
            "--scorer",
            "oracle",
            "--iterations",
            "3",
            "--resolution",
            "16",
        ])
        .args(["--slices", "4", "--seed", "3"])
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(run.join("synthesized.png").is_file());
    assert!(run.join("loss_curve.png").is_file());
    let result: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("result.json")).unwrap()).unwrap();
    assert_eq!(result["iterations"], 3);
}

#[test]
fn outpaint_preserves_it_via_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(tmp.path());
    let run = tmp.path().join("outpaint");
    let out = textile()
        .arg("outpaint")
        .arg("--image")
        .arg(corpus.join("images/train_neg_0000.png"))
        .args([
            "--border",
            "4",
            "--scorer",
            "oracle",
            "--iterations",
            "4",
            "--slices",
            "4",
        ])
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let result = stdout_json(&out);
    let before = result["seam_gap_before"].as_f64().unwrap();
    let after = result["seam_gap_after"].as_f64().unwrap();
    assert!(
        after < before,
        "outpainting should tighten the seam: {after} vs {before}"
    );
    assert!(run.join("outpainted.png").is_file());
}

fn tiny_net_config(path: &Path) {
    let config = serde_json::json!({
        "backbone": {
            "preset": "tiny",
            "stage_depths": [1, 1, 1, 1],
            "stage_widths": [8, 8, 16, 16],
            "input_channels": 3,
            "layerscale_init": 1.0,
        },
        "attention": {
            "heads": 2,
            "proj_dim": 4,
            "lambda_init": 1e-6,
            "placements": [2, 3],
        },
        "ln_eps": 1e-6,
    });
    std::fs::write(path, config.to_string()).unwrap();
}

#[test]
fn train_eval_score_saliency_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(tmp.path());
    let net_json = tmp.path().join("net.json");
    tiny_net_config(&net_json);

    let run = tmp.path().join("train");
    let out = textile()
        .arg("train")
        .arg("--manifest")
        .arg(corpus.join("manifest.csv"))
        .arg("--net-config")
        .arg(&net_json)
        .args([
            "--epochs",
            "1",
            "--batch-size",
            "4",
            "--resolution",
            "32",
            "--seed",
            "1",
        ])
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "train failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(stdout_json(&out)["epochs_run"], 1);
    let checkpoint = run.join("checkpoint.ttck");
    assert!(checkpoint.is_file());
    assert!(run.join("history.jsonl").is_file());
    assert!(run.join("summary.json").is_file());

    let out = textile()
        .arg("eval")
        .arg("--checkpoint")
        .arg(&checkpoint)
        .arg("--manifest")
        .arg(corpus.join("manifest.csv"))
        .args(["--split", "test"])
        .arg("--out")
        .arg(tmp.path().join("eval"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "eval failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let metrics = stdout_json(&out);
    assert!(metrics["accuracy"].is_f64() || metrics["accuracy"].is_u64());
    assert!(metrics["auc"].is_number());

    let out = textile()
        .arg("score")
        .arg(corpus.join("images/test_pos_0000.png"))
        .arg(corpus.join("images/test_neg_0000.png"))
        .arg("--checkpoint")
        .arg(&checkpoint)
        .arg("--out")
        .arg(tmp.path().join("score"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "score failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let lines: Vec<String> = String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(lines.len(), 2);
    assert!(tmp.path().join("score/scores.csv").is_file());
    assert!(tmp.path().join("score/scores.json").is_file());

    let out = textile()
        .arg("saliency")
        .arg("--checkpoint")
        .arg(&checkpoint)
        .arg("--image")
        .arg(corpus.join("images/test_pos_0000.png"))
        .arg("--out")
        .arg(tmp.path().join("saliency"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "saliency failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(tmp.path().join("saliency/saliency.png").is_file());
}

#[test]
fn bench_compares_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(tmp.path());
    let run = tmp.path().join("bench");
    let out = textile()
        .arg("bench")
        .arg(corpus.join("images"))
        .arg(corpus.join("images"))
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = stdout_json(&out);
    assert_eq!(summary["methods"], 2);
    assert!(run.join("scores.csv").is_file());
    assert!(run.join("summary.csv").is_file());
    assert!(run.join("correlation.csv").is_file());
    assert!(run.join("correlation.png").is_file());
}

// ---- failure modes ----

#[test]
fn unknown_flags_exit_with_usage_error() {
    let out = textile()
        .args(["align", "--definitely-not-a-flag"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_exits_distinctly() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(tmp.path());
    let out = textile()
        .arg("score")
        .arg(corpus.join("images/train_pos_0000.png"))
        .args(["--checkpoint", "does-not-exist.ttck"])
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_error(&out);
    assert_eq!(err["error"], "missing-input");
    assert!(err["message"].as_str().unwrap().contains("checkpoint"));
}

#[test]
fn missing_manifest_exits_distinctly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = textile()
        .arg("train")
        .args(["--manifest", "no-such-manifest.csv", "--epochs", "1"])
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_error(&out)["error"], "missing-input");
}

#[test]
fn unreadable_image_exits_distinctly() {
    let tmp = tempfile::tempdir().unwrap();
    let bogus = tmp.path().join("not-an-image.png");
    std::fs::write(&bogus, b"plain text").unwrap();
    let out = textile()
        .arg("align")
        .arg("--image")
        .arg(&bogus)
        .args(["--scorer", "oracle"])
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(6));
    assert_eq!(stderr_error(&out)["error"], "unreadable-image");
}

#[test]
fn invalid_query_exits_distinctly() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(tmp.path());
    let out = textile()
        .arg("align")
        .arg("--image")
        .arg(corpus.join("images/train_pos_0000.png"))
        .args(["--scorer", "oracle", "--step-deg", "0"])
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_error(&out)["error"], "invalid-config");
}

#[test]
fn learned_scorer_without_checkpoint_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(tmp.path());
    let out = textile()
        .arg("synth")
        .arg("--exemplar")
        .arg(corpus.join("images/train_pos_0000.png"))
        .args([
            "--scorer",
            "textile",
            "--iterations",
            "1",
            "--resolution",
            "16",
        ])
        .arg("--out")
        .arg(tmp.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_error(&out)["error"], "invalid-config");
}

#[test]
fn flags_override_config_files() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = small_corpus(tmp.path());
    // config file asks for 5 iterations; the flag overrides it down to 1
    let cfg = tmp.path().join("synth.json");
    std::fs::write(&cfg, r#"{"iterations": 5, "resolution": 16, "slices": 4}"#).unwrap();
    let run = tmp.path().join("override");
    let out = textile()
        .arg("synth")
        .arg("--exemplar")
        .arg(corpus.join("images/train_pos_0000.png"))
        .arg("--config")
        .arg(&cfg)
        .args(["--scorer", "oracle", "--iterations", "1"])
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let result: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("result.json")).unwrap()).unwrap();
    assert_eq!(
        result["iterations"], 1,
        "the flag should beat the config file"
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(
        manifest["config"]["resolution"], 16,
        "file values without flags survive"
    );
}
