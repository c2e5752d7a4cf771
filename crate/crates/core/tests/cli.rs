//! End-to-end tests of the `detfuse` binary: pipeline wiring, file formats,
//! exit codes, and byte-level determinism of every command.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_detfuse"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, code: i32, context: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{context}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const BUNDLE: &str = r#"
[synth]
seed = 7
frames = 8

[synth.scene]
width = 256
height = 224
pedestrians = 2
trees = 2
walls = 1
overlap_budget = 0.05

[[synth.detector]]
detector_id = "root_det"
tp_rate = 0.95
localization_sigma = 1.0
score_tp = [0.9, 0.05]
score_fp = [0.6, 0.05]
rng_seed = 1

[synth.detector.fp_rate_per_class]
tree = 0.5

[[synth.detector]]
detector_id = "sup_a"
tp_rate = 0.9
localization_sigma = 1.5
score_tp = [0.8, 0.08]
score_fp = [0.55, 0.08]
rng_seed = 2

[synth.detector.fp_rate_per_class]
tree = 0.6

[[synth.detector]]
detector_id = "sup_b"
tp_rate = 0.85
localization_sigma = 1.5
score_tp = [0.7, 0.06]
score_fp = [0.5, 0.06]
rng_seed = 3

[synth.detector.fp_rate_per_class]
wall = 0.6
"#;

fn write_bundle(dir: &Path) -> PathBuf {
    let path = dir.join("bundle.toml");
    fs::write(&path, BUNDLE).unwrap();
    path
}

/// Runs synth into `dir/data` and returns that directory.
fn synth_dataset(dir: &Path) -> PathBuf {
    let bundle = write_bundle(dir);
    let out = run_in(
        dir,
        &["synth", "--config", bundle.to_str().unwrap(), "--out", "data"],
    );
    assert_code(&out, 0, "synth");
    dir.join("data")
}

#[test]
fn full_pipeline_runs_and_produces_expected_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = synth_dataset(dir);

    assert!(data.join("gt.txt").is_file());
    for id in ["root_det", "sup_a", "sup_b"] {
        assert!(data.join(format!("{id}.det")).is_file(), "{id}.det missing");
    }
    let images: Vec<_> = fs::read_dir(data.join("images")).unwrap().collect();
    assert_eq!(images.len(), 8, "one image per frame");

    // Train content models for the two support detectors.
    let out = run_in(
        dir,
        &[
            "train",
            "--detections",
            "data/sup_a.det",
            "--detections",
            "data/sup_b.det",
            "--gt",
            "data/gt.txt",
            "--images",
            "data/images",
            "--feature",
            "hog",
            "--components",
            "2",
            "--out",
            "models",
        ],
    );
    assert_code(&out, 0, "train");
    assert!(dir.join("models/sup_a.plsmodel").is_file());
    assert!(dir.join("models/sup_b.plsmodel").is_file());
    let manifest = fs::read_to_string(dir.join("models/manifest.toml")).unwrap();
    assert!(manifest.contains("feature = \"hog\""), "{manifest}");
    assert!(manifest.contains("components = 2"), "{manifest}");
    assert!(manifest.contains("detector = \"sup_a\""), "{manifest}");

    // Calibrate both support detectors onto the root's score scale.
    let out = run_in(
        dir,
        &[
            "calib",
            "--root",
            "data/root_det.det",
            "--support",
            "data/sup_a.det",
            "--support",
            "data/sup_b.det",
            "--out",
            "calib.toml",
        ],
    );
    assert_code(&out, 0, "calib");
    let calib_text = fs::read_to_string(dir.join("calib.toml")).unwrap();
    assert!(calib_text.contains("sup_a") && calib_text.contains("sup_b"));

    // Overlap-weighted fusion.
    let out = run_in(
        dir,
        &[
            "fuse",
            "--root",
            "data/root_det.det",
            "--support",
            "data/sup_a.det",
            "--support",
            "data/sup_b.det",
            "--calib",
            "calib.toml",
            "--mode",
            "sc",
            "--out",
            "fused_sc.det",
        ],
    );
    assert_code(&out, 0, "fuse sc");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("windows in") && stdout.contains("out"), "{stdout}");

    // Content-weighted fusion.
    let out = run_in(
        dir,
        &[
            "fuse",
            "--root",
            "data/root_det.det",
            "--support",
            "data/sup_a.det",
            "--support",
            "data/sup_b.det",
            "--models",
            "models",
            "--calib",
            "calib.toml",
            "--images",
            "data/images",
            "--mode",
            "csbc",
            "--out",
            "fused_csbc.det",
        ],
    );
    assert_code(&out, 0, "fuse csbc");

    // Evaluate and plot.
    let out = run_in(
        dir,
        &[
            "eval",
            "--detections",
            "fused_sc.det",
            "--gt",
            "data/gt.txt",
            "--out",
            "sc.csv",
            "--svg",
            "sc.svg",
        ],
    );
    assert_code(&out, 0, "eval");
    let csv = fs::read_to_string(dir.join("sc.csv")).unwrap();
    assert!(csv.starts_with("fppi,miss_rate\n"), "{csv}");
    assert!(csv.lines().last().unwrap().starts_with("lamr,"), "{csv}");
    let svg = fs::read_to_string(dir.join("sc.svg")).unwrap();
    assert!(svg.starts_with("<svg"));

    let out = run_in(
        dir,
        &["plot", "--curve", "sc=sc.csv", "--curve", "sc.csv", "--out", "plot.svg"],
    );
    assert_code(&out, 0, "plot");
    let plot = fs::read_to_string(dir.join("plot.svg")).unwrap();
    assert!(plot.contains("class=\"ref\""), "reference gridlines present");
}

#[test]
fn every_command_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let bundle = write_bundle(dir);
    for name in ["a", "b"] {
        let out = run_in(
            dir,
            &["synth", "--config", bundle.to_str().unwrap(), "--out", name],
        );
        assert_code(&out, 0, "synth");
    }
    for file in ["gt.txt", "root_det.det", "sup_a.det", "sup_b.det", "images/f0003.pgm"] {
        let a = fs::read(dir.join("a").join(file)).unwrap();
        let b = fs::read(dir.join("b").join(file)).unwrap();
        assert_eq!(a, b, "synth output {file} differs between runs");
    }

    let calib_args = [
        "calib",
        "--root",
        "a/root_det.det",
        "--support",
        "a/sup_a.det",
        "--support",
        "a/sup_b.det",
        "--out",
    ];
    for out_name in ["calib1.toml", "calib2.toml"] {
        let mut args = calib_args.to_vec();
        args.push(out_name);
        assert_code(&run_in(dir, &args), 0, "calib");
    }
    assert_eq!(
        fs::read(dir.join("calib1.toml")).unwrap(),
        fs::read(dir.join("calib2.toml")).unwrap()
    );

    let fuse_args = [
        "fuse",
        "--root",
        "a/root_det.det",
        "--support",
        "a/sup_a.det",
        "--support",
        "a/sup_b.det",
        "--calib",
        "calib1.toml",
        "--mode",
        "sc",
        "--out",
    ];
    for out_name in ["fused1.det", "fused2.det"] {
        let mut args = fuse_args.to_vec();
        args.push(out_name);
        assert_code(&run_in(dir, &args), 0, "fuse");
    }
    let fused = fs::read(dir.join("fused1.det")).unwrap();
    assert_eq!(fused, fs::read(dir.join("fused2.det")).unwrap());

    for out_name in ["e1.csv", "e2.csv"] {
        let out = run_in(
            dir,
            &["eval", "--detections", "fused1.det", "--gt", "a/gt.txt", "--out", out_name],
        );
        assert_code(&out, 0, "eval");
    }
    assert_eq!(
        fs::read(dir.join("e1.csv")).unwrap(),
        fs::read(dir.join("e2.csv")).unwrap()
    );
}

#[test]
fn zero_components_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        &[
            "train",
            "--detections",
            "x.det",
            "--gt",
            "gt.txt",
            "--feature",
            "glcm",
            "--components",
            "0",
            "--out",
            "m",
            "--images",
            "img",
        ],
    );
    assert_code(&out, 2, "components 0");
    assert!(String::from_utf8_lossy(&out.stderr).contains("--components"));
}

#[test]
fn csbc_without_models_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = synth_dataset(dir);
    let out = run_in(
        dir,
        &[
            "calib",
            "--root",
            "data/root_det.det",
            "--support",
            "data/sup_a.det",
            "--out",
            "calib.toml",
        ],
    );
    assert_code(&out, 0, "calib");
    let out = run_in(
        dir,
        &[
            "fuse",
            "--root",
            "data/root_det.det",
            "--support",
            "data/sup_a.det",
            "--calib",
            "calib.toml",
            "--mode",
            "csbc",
            "--out",
            "fused.det",
        ],
    );
    assert_code(&out, 2, "csbc without models");
    assert!(String::from_utf8_lossy(&out.stderr).contains("--models"));
    drop(data);
}

#[test]
fn malformed_bundle_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.toml"), "[synth]\nseeed = 3\n").unwrap();
    let out = run_in(dir, &["synth", "--config", "bad.toml", "--out", "d", "--frames", "1"]);
    assert_code(&out, 2, "unknown bundle key");

    fs::write(dir.join("worse.toml"), "not even toml [").unwrap();
    let out = run_in(dir, &["synth", "--config", "worse.toml", "--out", "d", "--frames", "1"]);
    assert_code(&out, 2, "unparsable bundle");
}

#[test]
fn missing_image_for_a_referenced_frame_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = synth_dataset(dir);
    // Remove one frame's image and train against the broken directory.
    fs::remove_file(data.join("images/f0002.pgm")).unwrap();
    let out = run_in(
        dir,
        &[
            "train",
            "--detections",
            "data/sup_a.det",
            "--gt",
            "data/gt.txt",
            "--images",
            "data/images",
            "--feature",
            "hog",
            "--components",
            "2",
            "--out",
            "models",
        ],
    );
    assert_code(&out, 1, "missing image");
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("f0002"),
        "error names the frame: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn empty_ground_truth_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = synth_dataset(dir);
    fs::write(dir.join("empty_gt.txt"), "").unwrap();
    let out = run_in(
        dir,
        &[
            "eval",
            "--detections",
            "data/root_det.det",
            "--gt",
            "empty_gt.txt",
            "--out",
            "c.csv",
        ],
    );
    assert_code(&out, 1, "empty gt");
    drop(data);
}

#[test]
fn zero_frames_yield_an_empty_ground_truth_file() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let bundle = write_bundle(dir);
    let out = run_in(
        dir,
        &[
            "synth",
            "--config",
            bundle.to_str().unwrap(),
            "--frames",
            "0",
            "--out",
            "empty",
        ],
    );
    assert_code(&out, 0, "synth 0 frames");
    let gt = fs::read_to_string(dir.join("empty/gt.txt")).unwrap();
    assert!(gt.lines().all(|l| l.is_empty() || l.starts_with('#')), "{gt}");
    let images: Vec<_> = fs::read_dir(dir.join("empty/images")).unwrap().collect();
    assert!(images.is_empty());
}

#[test]
fn perfect_and_empty_detectors_hit_the_lamr_extremes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("perfect.toml"),
        r#"
[synth]
seed = 3
frames = 5

[synth.scene]
width = 256
height = 224
pedestrians = 2
trees = 1
walls = 1

[[synth.detector]]
detector_id = "oracle_det"
tp_rate = 1.0
localization_sigma = 0.0
score_tp = [0.9, 0.05]
score_fp = [0.5, 0.05]
rng_seed = 4
"#,
    )
    .unwrap();
    let out = run_in(dir, &["synth", "--config", "perfect.toml", "--out", "d"]);
    assert_code(&out, 0, "synth");
    let out = run_in(
        dir,
        &["eval", "--detections", "d/oracle_det.det", "--gt", "d/gt.txt", "--out", "p.csv"],
    );
    assert_code(&out, 0, "eval perfect");
    let csv = fs::read_to_string(dir.join("p.csv")).unwrap();
    assert_eq!(csv.lines().last().unwrap(), "lamr,0.00", "{csv}");

    fs::write(dir.join("none.det"), "").unwrap();
    let out = run_in(
        dir,
        &["eval", "--detections", "none.det", "--gt", "d/gt.txt", "--out", "n.csv"],
    );
    assert_code(&out, 0, "eval empty");
    let csv = fs::read_to_string(dir.join("n.csv")).unwrap();
    assert_eq!(csv.lines().last().unwrap(), "lamr,100.00", "{csv}");
}

#[test]
fn flags_override_bundle_values() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let bundle = write_bundle(dir); // bundle says frames = 8
    let out = run_in(
        dir,
        &[
            "synth",
            "--config",
            bundle.to_str().unwrap(),
            "--frames",
            "2",
            "--out",
            "few",
        ],
    );
    assert_code(&out, 0, "synth with override");
    let images: Vec<_> = fs::read_dir(dir.join("few/images")).unwrap().collect();
    assert_eq!(images.len(), 2, "explicit --frames wins over the bundle");
}

#[test]
fn unknown_flags_exit_with_the_usage_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["fuse", "--no-such-flag"]);
    assert_code(&out, 2, "unknown flag");
    let out = run_in(tmp.path(), &["no-such-command"]);
    assert_code(&out, 2, "unknown subcommand");
}
