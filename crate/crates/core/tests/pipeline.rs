use std::path::Path;

use dyadic_activity::dataset::{write_records, Activity, ActivityKind, ActivityLabelRecord};
use dyadic_activity::frames::{FrameDescriptor, RawVideoWriter};
use dyadic_activity::model::{save_weights, Model, ModelConfig};
use dyadic_activity::nn::Mode;
use dyadic_activity::pipeline::{run_pipeline, FramesRef, SessionConfig, OUTPUT_DIR_ENV};
use dyadic_activity::proposals::{write_inits, Keyframe, RegionInit};

/// A quiet 64x48 session of `seconds` with no detections at all.
fn quiet_session(dir: &Path, seconds: usize) -> SessionConfig {
    let mut w = RawVideoWriter::create(dir.join("f.rgb"), 64, 48, 30).unwrap();
    for k in 0..seconds * 30 {
        w.push(&vec![(k % 200) as u8; 64 * 48 * 3]).unwrap();
    }
    w.finish(dir.join("f.toml")).unwrap();
    std::fs::write(dir.join("det.jsonl"), "").unwrap();
    let init = RegionInit {
        person: "A".into(),
        keyframes: vec![Keyframe {
            frame: 0,
            x: 0.0,
            y: 0.0,
            w: 64.0,
            h: 48.0,
        }],
    };
    write_inits(dir.join("regions.jsonl"), &[init]).unwrap();
    let mut m = Model::build(ModelConfig::new(4, 10).unwrap(), 1);
    m.set_mode(Mode::Eval);
    save_weights(&m, dir.join("w.dyad")).unwrap();
    let mut c = SessionConfig::new(
        "quiet",
        FramesRef::Sidecar("f.toml".into()),
        "det.jsonl".into(),
        "regions.jsonl".into(),
        "w.dyad".into(),
    );
    c.output_dir = Some("out".into());
    c.save(dir.join("session.toml")).unwrap();
    SessionConfig::load(dir.join("session.toml")).unwrap()
}

#[test]
fn no_detections_give_an_empty_map() {
    let dir = tempfile::tempdir().unwrap();
    let c = quiet_session(dir.path(), 20);
    for (kind, stages, first) in [
        (
            ActivityKind::Typing,
            ["track", "propose", "classify", "map"],
            "track.jsonl",
        ),
        (
            ActivityKind::Writing,
            ["project", "propose", "classify", "map"],
            "stable_regions.jsonl",
        ),
    ] {
        let r = run_pipeline(&c, kind).unwrap();
        assert_eq!(r.proposals, 0);
        assert!(r.doc.clusters.is_empty());
        assert!(r.doc.evaluation.is_none());
        let names: Vec<&str> = r.timing.stages.iter().map(|s| s.stage.as_str()).collect();
        assert_eq!(names, stages);
        for f in [
            first,
            "proposals.jsonl",
            "classification.jsonl",
            "actmap.json",
            "timing.txt",
            "timing.json",
        ] {
            assert!(dir.path().join("out").join(f).exists(), "{f}");
        }
        let doc = dyadic_activity::activity_map::ActivityMapDoc::load(&r.map_path).unwrap();
        assert_eq!(doc.session.duration, 20.0);
        assert_eq!(doc, r.doc);
    }
}

#[test]
fn labels_without_detections_are_all_missed() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = quiet_session(dir.path(), 10);
    let rec = ActivityLabelRecord {
        session_id: "quiet".into(),
        activity: Activity::Typing,
        person: "A".into(),
        f0: 30,
        f1: 200,
        x: 0.0,
        y: 0.0,
        w: 10.0,
        h: 10.0,
        excluded: false,
    };
    let other = ActivityLabelRecord {
        session_id: "elsewhere".into(),
        ..rec.clone()
    };
    write_records(dir.path().join("labels.jsonl"), &[rec, other]).unwrap();
    c.labels = Some(dir.path().join("labels.jsonl"));
    let e = run_pipeline(&c, ActivityKind::Typing)
        .unwrap()
        .doc
        .evaluation
        .unwrap();
    assert_eq!((e.tp, e.fp, e.fn_), (0, 0, 1));
    assert_eq!(
        (e.false_negatives[0].t_start, e.false_negatives[0].t_end),
        (1.0, 200.0 / 30.0)
    );
}

#[test]
fn failures_name_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let c = quiet_session(dir.path(), 5);
    std::fs::write(&c.detections, "{\"frame\": 0}\n").unwrap();
    let err = run_pipeline(&c, ActivityKind::Typing)
        .unwrap_err()
        .to_string();
    assert!(err.starts_with("stage `track` failed"), "{err}");
    assert!(err.contains("det.jsonl:1"), "{err}");
    let err = run_pipeline(&c, ActivityKind::Writing)
        .unwrap_err()
        .to_string();
    assert!(err.starts_with("stage `project` failed"), "{err}");

    let mut missing = c.clone();
    missing.weights = dir.path().join("nope.dyad");
    let err = run_pipeline(&missing, ActivityKind::Typing)
        .unwrap_err()
        .to_string();
    assert!(
        err.starts_with("stage `config` failed") && err.contains("nope.dyad"),
        "{err}"
    );

    let mut slow = c.clone();
    let mut d = FrameDescriptor::load(dir.path().join("f.toml")).unwrap();
    d.fps = 25;
    slow.frames = FramesRef::Inline(d);
    let err = run_pipeline(&slow, ActivityKind::Typing)
        .unwrap_err()
        .to_string();
    assert!(err.contains("30 fps, got 25"), "{err}");
}

#[test]
fn config_round_trip_and_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let c = quiet_session(dir.path(), 1);
    assert_eq!(c.weights, dir.path().join("w.dyad"));
    assert_eq!(c.output_dir(), dir.path().join("out"));
    assert_eq!(c.frames, FramesRef::Sidecar(dir.path().join("f.toml")));
    c.save(dir.path().join("again.toml")).unwrap();
    assert_eq!(
        SessionConfig::load(dir.path().join("again.toml")).unwrap(),
        c
    );

    let inline = r#"
schema = "session/1"
session_id = "s"
detections = "d.jsonl"
regions = "r.jsonl"
weights = "w.dyad"

[frames]
path = "v.rgb"
width = 858
height = 480
fps = 30
frame_count = 900

[map]
gap_seconds = 5.0
"#;
    std::fs::write(dir.path().join("inline.toml"), inline).unwrap();
    let c = SessionConfig::load(dir.path().join("inline.toml")).unwrap();
    let FramesRef::Inline(d) = &c.frames else {
        panic!("inline frames")
    };
    assert_eq!(d.path, dir.path().join("v.rgb"));
    assert_eq!(c.map.gap_seconds, 5.0);
    assert_eq!(c.map.probability_threshold, 0.5);
    assert_eq!(c.inference.batch_size, 16);

    let err = SessionConfig::parse(
        &inline.replace("session/1", "session/2"),
        Path::new("x.toml"),
    )
    .unwrap_err();
    assert!(err.to_string().contains("session/2"));
    let err = SessionConfig::parse(
        "schema = \"session/1\"\nsession_id = 3\n",
        Path::new("x.toml"),
    )
    .unwrap_err();
    assert!(err.to_string().contains("x.toml:2"), "{err}");
}

#[test]
fn output_dir_falls_back_to_environment() {
    let mut c = SessionConfig::new(
        "s",
        FramesRef::Sidecar("f.toml".into()),
        "d".into(),
        "r".into(),
        "w".into(),
    );
    std::env::set_var(OUTPUT_DIR_ENV, "/tmp/from-env");
    assert_eq!(c.output_dir(), Path::new("/tmp/from-env"));
    c.output_dir = Some("cfg".into());
    assert_eq!(c.output_dir(), Path::new("cfg"));
    std::env::remove_var(OUTPUT_DIR_ENV);
    c.output_dir = None;
    assert_eq!(c.output_dir(), Path::new("dyadic-out"));
}
