use std::path::Path;
use std::process::{Command, Output};

use dfm_core::decoder::load_weights;
use dfm_core::project::{import_baseline, Edit, Project};
use dfm_core::EmotionLabel;

fn dfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn dfm")
}

fn ok(args: &[&str]) -> Output {
    let out = dfm(args);
    assert!(
        out.status.success(),
        "dfm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small subject with a trained decoder.
fn setup(dir: &Path) {
    ok(&[
        "synth-subject", "--seed", "3", "--frames", "120", "--out", p(dir), "--samples", "600", "--vertices", "400",
    ]);
    ok(&[
        "train", "--data", p(&dir.join("dataset.jsonl")), "--out", p(&dir.join("weights.dfmw")), "--epochs", "2",
    ]);
}

#[test]
fn synth_train_compile_preview_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    for f in ["dataset.jsonl", "subject.jsonl", "baseline.jsonl", "model.dfm3", "project.json", "weights.csv"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let w = load_weights(dir.join("weights.dfmw")).unwrap();
    assert_eq!(w.layer_widths(), vec![2, 256, 128, 64, 30]);
    let csv = std::fs::read_to_string(dir.join("weights.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    // No edits: the compiled track is the baseline.
    let track = dir.join("track.jsonl");
    ok(&["compile", "--project", p(&dir.join("project.json")), "--out", p(&track)]);
    let compiled = import_baseline(&track).unwrap();
    let baseline = import_baseline(dir.join("baseline.jsonl")).unwrap();
    assert_eq!(compiled, baseline);
    let prov: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.join("track.jsonl.provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["frames"].as_array().unwrap().len(), 120);

    let ppm = dir.join("f.ppm");
    let pgm = dir.join("f.pgm");
    ok(&[
        "preview", "--track", p(&track), "--model", p(&dir.join("model.dfm3")), "--frame", "10", "--out", p(&ppm),
        "--width", "64", "--height", "48", "--mask", p(&pgm),
    ]);
    assert!(std::fs::read(&ppm).unwrap().starts_with(b"P6\n64 48\n255\n"));
    assert!(std::fs::read(&pgm).unwrap().starts_with(b"P5\n64 48\n255\n"));

    let report = dir.join("eval.json");
    let out = ok(&[
        "eval", "--subject", p(&dir.join("subject.jsonl")), "--weights", p(&dir.join("weights.dfmw")), "--out",
        p(&report), "--width", "48", "--height", "48",
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("Emotion self-reenactment"));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    for t in ["type_a", "type_b"] {
        for k in ["apd", "face_apd", "mouth_apd", "frames_evaluated"] {
            assert!(v[t][k].is_number(), "{t}.{k}");
        }
    }
    assert_eq!(v["test_frames"], 36);
}

#[test]
fn edits_change_only_their_span() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    let pj = dir.join("project.json");
    let mut project = Project::load(&pj).unwrap();
    project.edits.push(Edit {
        start_frame: 30,
        end_frame: 90,
        label: EmotionLabel::Happy,
        intensity: Some(dfm_core::Intensity::High),
        seed: 5,
    });
    project.save(&pj).unwrap();
    let track = dir.join("track.jsonl");
    ok(&["compile", "--project", p(&pj), "--out", p(&track)]);
    let compiled = import_baseline(&track).unwrap();
    let baseline = import_baseline(dir.join("baseline.jsonl")).unwrap();
    assert_eq!(compiled.frames[..30], baseline.frames[..30]);
    assert_eq!(compiled.frames[90..], baseline.frames[90..]);
    assert_ne!(compiled.frames[60], baseline.frames[60]);
}

#[test]
fn exit_codes() {
    assert_eq!(dfm(&["--help"]).status.code(), Some(0));
    assert_eq!(dfm(&["--version"]).status.code(), Some(0));
    assert_eq!(dfm(&["train"]).status.code(), Some(2));
    assert_eq!(dfm(&["frobnicate"]).status.code(), Some(2));

    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.jsonl");
    let out = dfm(&["--json", "train", "--data", p(&missing), "--out", p(&tmp.path().join("w"))]);
    assert_eq!(out.status.code(), Some(3));
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"]["kind"], "data");
    assert!(v["error"]["message"].as_str().unwrap().contains("nope.jsonl"));

    let bad = tmp.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"video_id\":\"v\",\"frame_idx\":0,\"va\":[0.1]}\n").unwrap();
    let out = dfm(&["train", "--data", p(&bad), "--out", p(&tmp.path().join("w"))]);
    assert_eq!(out.status.code(), Some(3));

    let out = dfm(&["--json", "train", "--data", p(&bad), "--out", "w", "--val-fraction", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"]["exit_code"], 2);
}

#[test]
fn overlapping_edits_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    let pj = dir.join("project.json");
    let mut project = Project::load(&pj).unwrap();
    for (s, e) in [(10, 50), (40, 80)] {
        project.edits.push(Edit {
            start_frame: s,
            end_frame: e,
            label: EmotionLabel::Sad,
            intensity: Some(dfm_core::Intensity::Low),
            seed: 0,
        });
    }
    project.save(&pj).unwrap();
    let out = dfm(&["compile", "--project", p(&pj), "--out", p(&dir.join("t.jsonl"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("overlap"));
}
