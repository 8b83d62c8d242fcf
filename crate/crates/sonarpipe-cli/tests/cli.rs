//! End-to-end exercises of the `sonarpipe` binary: stage-by-stage runs over
//! a synthetic clip, the combined `run` subcommand, and determinism of the
//! written artifacts.

use std::path::Path;
use std::process::Command;

fn sonarpipe() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sonarpipe"))
}

fn run_ok(cmd: &mut Command) -> String {
    let output = cmd.output().expect("binary runs");
    assert!(
        output.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn synth_clip(dir: &Path, clip_id: &str, seed: u64, fish: usize) {
    run_ok(sonarpipe().args([
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--clip-id",
        clip_id,
        "--seed",
        &seed.to_string(),
        "--frames",
        "140",
        "--fish",
        &fish.to_string(),
        "--width",
        "192",
        "--height",
        "120",
    ]));
    assert!(dir.join("clip.json").is_file());
    assert!(dir.join("frames/000000.pgm").is_file());
    assert!(dir.join("annotations").is_dir());
    assert!(dir.join("passages.csv").is_file());
}

#[test]
fn stage_by_stage_matches_spec_interfaces() {
    let tmp = tempfile::tempdir().unwrap();
    let clip_dir = tmp.path().join("clip");
    synth_clip(&clip_dir, "stages", 21, 2);
    let manifest = clip_dir.join("clip.json");

    // preprocess with artifact dumps
    let masks = tmp.path().join("masks");
    let composed = tmp.path().join("composed");
    run_ok(sonarpipe().args([
        "preprocess",
        "--manifest",
        manifest.to_str().unwrap(),
        "--dump-masks",
        masks.to_str().unwrap(),
        "--dump-composed",
        composed.to_str().unwrap(),
    ]));
    assert!(masks.join("stages_000000_b.pgm").is_file());
    assert!(composed.join("stages_000139_rbb_f.png").is_file());

    // detect -> track-filter -> eval-model -> eval-eco
    let dets = tmp.path().join("dets.jsonl");
    run_ok(sonarpipe().args([
        "detect",
        "--manifest",
        manifest.to_str().unwrap(),
        "--baseline",
        "--out",
        dets.to_str().unwrap(),
    ]));
    assert!(dets.is_file());

    let tracks = tmp.path().join("tracks.jsonl");
    let surviving = tmp.path().join("surviving.jsonl");
    run_ok(sonarpipe().args([
        "track-filter",
        "--detections",
        dets.to_str().unwrap(),
        "--out",
        tracks.to_str().unwrap(),
        "--surviving",
        surviving.to_str().unwrap(),
    ]));
    assert!(tracks.is_file() && surviving.is_file());

    let model_report = tmp.path().join("model.json");
    let stdout = run_ok(sonarpipe().args([
        "eval-model",
        "--pred",
        dets.to_str().unwrap(),
        "--gt",
        clip_dir.join("annotations").to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--iou",
        "0.5",
        "--out",
        model_report.to_str().unwrap(),
    ]));
    assert!(stdout.contains("kappa"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&model_report).unwrap()).unwrap();
    assert_eq!(report["images"], 140);
    assert_eq!(report["config"]["iou_thresh"], 0.5);

    let eco_report = tmp.path().join("eco.json");
    let stdout = run_ok(sonarpipe().args([
        "eval-eco",
        "--tracks",
        tracks.to_str().unwrap(),
        "--passages",
        clip_dir.join("passages.csv").to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--detections",
        surviving.to_str().unwrap(),
        "--tolerance",
        "10",
        "--out",
        eco_report.to_str().unwrap(),
    ]));
    assert!(stdout.contains("Recall (%TP) by fish size"));
    assert!(stdout.contains("All species"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&eco_report).unwrap()).unwrap();
    assert_eq!(report["tolerance_s"], 10.0);
    assert!(report["cameras"]["DIDSON"]["total_passages"].as_u64().unwrap() >= 1);
}

#[test]
fn run_subcommand_produces_reports_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let clip_a = tmp.path().join("a");
    let clip_b = tmp.path().join("b");
    synth_clip(&clip_a, "clip-a", 31, 2);
    synth_clip(&clip_b, "clip-b", 32, 0);

    // clip-b is fish-free; merge the two passage logs for the eco report
    let mut passages = std::fs::read_to_string(clip_a.join("passages.csv")).unwrap();
    let b_log = std::fs::read_to_string(clip_b.join("passages.csv")).unwrap();
    for line in b_log.lines().skip(1) {
        passages.push_str(line);
        passages.push('\n');
    }
    let merged = tmp.path().join("passages.csv");
    std::fs::write(&merged, passages).unwrap();
    let empties = tmp.path().join("empty.txt");
    std::fs::write(&empties, "clip-b\n").unwrap();

    let run_once = |out_name: &str, jobs: &str, env_jobs: Option<&str>| -> (String, String) {
        let out_dir = tmp.path().join(out_name);
        let mut cmd = sonarpipe();
        if let Some(n) = env_jobs {
            cmd.env("SONARPIPE_JOBS", n);
        }
        run_ok(cmd.args([
            "run",
            "--manifest",
            clip_a.join("clip.json").to_str().unwrap(),
            "--manifest",
            clip_b.join("clip.json").to_str().unwrap(),
            "--gt",
            tmp.path().to_str().unwrap(), // unused subdirs fall back per clip
            "--passages",
            merged.to_str().unwrap(),
            "--empty-clips",
            empties.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--jobs",
            jobs,
        ]));
        for artifact in [
            "detections.jsonl",
            "surviving.jsonl",
            "tracks.jsonl",
            "run_config.json",
        ] {
            assert!(out_dir.join(artifact).is_file(), "{artifact} missing");
        }
        (
            std::fs::read_to_string(out_dir.join("eco_report.json")).unwrap(),
            std::fs::read_to_string(out_dir.join("tracks.jsonl")).unwrap(),
        )
    };

    // the annotation lookup expects gt/<clip_id>; link the synth layout in
    std::fs::create_dir_all(tmp.path().join("clip-a")).unwrap();
    std::fs::create_dir_all(tmp.path().join("clip-b")).unwrap();
    copy_dir(&clip_a.join("annotations"), &tmp.path().join("clip-a"));
    copy_dir(&clip_b.join("annotations"), &tmp.path().join("clip-b"));

    let (eco_1, tracks_1) = run_once("out1", "1", None);
    let (eco_2, tracks_2) = run_once("out2", "2", None);
    assert_eq!(eco_1, eco_2, "reports must not depend on job count");
    assert_eq!(tracks_1, tracks_2);
    // the environment variable overrides --jobs
    let (eco_3, tracks_3) = run_once("out3", "1", Some("2"));
    assert_eq!(eco_1, eco_3);
    assert_eq!(tracks_1, tracks_3);

    let eco: serde_json::Value = serde_json::from_str(&eco_1).unwrap();
    let cam = &eco["cameras"]["DIDSON"];
    assert_eq!(cam["empty_clips"], 1);
    assert!(cam["tn_percent"].as_f64().unwrap() > 90.0);

    // the config record carries the effective per-camera preset
    let config: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("out1/run_config.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(config["clips"][0]["background"]["var_threshold"], 130.0);
    assert_eq!(config["mode"], "rbb_f");
    assert_eq!(config["eval"]["tolerance_s"], 10.0);
}

fn copy_dir(from: &Path, to: &Path) {
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
    }
}

#[test]
fn missing_frame_fails_with_stage_and_path() {
    let tmp = tempfile::tempdir().unwrap();
    let clip_dir = tmp.path().join("clip");
    synth_clip(&clip_dir, "broken", 5, 0);
    std::fs::remove_file(clip_dir.join("frames/000007.pgm")).unwrap();

    let output = sonarpipe()
        .args([
            "detect",
            "--manifest",
            clip_dir.join("clip.json").to_str().unwrap(),
            "--baseline",
            "--out",
            tmp.path().join("dets.jsonl").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("clipio"), "stage tag missing: {stderr}");
    assert!(stderr.contains("000007.pgm"), "path missing: {stderr}");
}

#[test]
fn external_detections_flow_through() {
    let tmp = tempfile::tempdir().unwrap();
    let clip_dir = tmp.path().join("clip");
    synth_clip(&clip_dir, "ext", 6, 0);

    let log = tmp.path().join("external.jsonl");
    let mut lines = String::new();
    for frame in 40..46 {
        lines.push_str(&format!(
            "{{\"clip_id\":\"ext\",\"frame\":{frame},\"x\":{},\"y\":50,\"w\":30,\"h\":12,\"conf\":0.9}}\n",
            10 + 2 * (frame - 40)
        ));
    }
    std::fs::write(&log, lines).unwrap();

    let dets = tmp.path().join("dets.jsonl");
    run_ok(sonarpipe().args([
        "detect",
        "--manifest",
        clip_dir.join("clip.json").to_str().unwrap(),
        "--external",
        log.to_str().unwrap(),
        "--out",
        dets.to_str().unwrap(),
    ]));
    let text = std::fs::read_to_string(&dets).unwrap();
    assert_eq!(text.lines().count(), 6);

    let tracks = tmp.path().join("tracks.jsonl");
    run_ok(sonarpipe().args([
        "track-filter",
        "--detections",
        dets.to_str().unwrap(),
        "--out",
        tracks.to_str().unwrap(),
    ]));
    let track_text = std::fs::read_to_string(&tracks).unwrap();
    assert_eq!(track_text.lines().count(), 1, "one six-frame track expected");
    let track: serde_json::Value = serde_json::from_str(track_text.lines().next().unwrap()).unwrap();
    assert_eq!(track["start_frame"], 40);
    assert_eq!(track["end_frame"], 45);
}
