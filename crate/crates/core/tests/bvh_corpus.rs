use gesturekit::bvh::*;
use gesturekit::rotation::geodesic_distance;
use gesturekit::synth::reference_rig_motion;
use std::path::{Path, PathBuf};

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/bvh")
}

fn corpus() -> Vec<(String, String)> {
    let mut files: Vec<_> = std::fs::read_dir(corpus_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "bvh"))
        .collect();
    files.sort();
    files.into_iter().map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap())).collect()
}

#[test]
fn bundled_reference_rig_matches_generator() {
    let text = write_bvh(&reference_rig_motion(90, 30.0, 7));
    let path = corpus_dir().join("reference_rig.bvh");
    if std::env::var_os("GESTUREKIT_REGENERATE").is_some() {
        std::fs::write(&path, &text).unwrap();
    }
    assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
}

#[test]
fn parse_write_parse_is_idempotent() {
    let files = corpus();
    assert!(files.len() >= 5);
    for (name, text) in files {
        let a = parse_bvh(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        let written = write_bvh(&a);
        let b = parse_bvh(&written).unwrap();
        assert_eq!(a, b, "{name}");
        assert_eq!(write_bvh(&b), written, "{name}");
    }
}

#[test]
fn reference_rig_has_78_joints() {
    let doc = parse_bvh(&std::fs::read_to_string(corpus_dir().join("reference_rig.bvh")).unwrap()).unwrap();
    assert_eq!(doc.joints.len(), 78);
    assert_eq!(doc.frames.len(), 90);
    assert_eq!(doc.channel_count(), 78 * 3 + 3);
}

#[test]
fn frame_count_mismatch_is_reported() {
    for (name, text) in corpus() {
        let n = parse_bvh(&text).unwrap().frames.len();
        let err = parse_bvh(&redeclare(&text, n + 1)).unwrap_err();
        assert_eq!(err, BvhError::FrameCount { declared: n + 1, found: n }, "{name}");
        if n > 0 {
            let err = parse_bvh(&redeclare(&text, n - 1)).unwrap_err();
            assert_eq!(err, BvhError::FrameCount { declared: n - 1, found: n }, "{name}");
        }
    }
}

/// Rewrites the declared frame count, keeping the frame rows.
fn redeclare(text: &str, declared: usize) -> String {
    text.lines()
        .map(|l| if l.trim_start().starts_with("Frames:") { format!("Frames: {declared}") } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn mixed_orders_compose_in_listed_order() {
    let doc = parse_bvh(&std::fs::read_to_string(corpus_dir().join("mixed_orders.bvh")).unwrap()).unwrap();
    let neck = doc.joint_index("neck").unwrap();
    // neck lists Z Y X: R = Rz(-15) Ry(7.5) Rx(3.25) in frame 0
    let r = doc.local_rotation(0, neck);
    let rz = gesturekit::rotation::RotationMatrix::about_z(-15f64.to_radians());
    let ry = gesturekit::rotation::RotationMatrix::about_y(7.5f64.to_radians());
    let rx = gesturekit::rotation::RotationMatrix::about_x(3.25f64.to_radians());
    assert!(geodesic_distance(&r, &rz.mul(&ry).mul(&rx)) < 1e-12);
}

#[test]
fn reference_rig_converts_to_motion_clip() {
    let doc = reference_rig_motion(30, 30.0, 3);
    let clip = to_motion_clip_scaled(&doc, &JointMap::reference_rig(), 0.01).unwrap();
    assert_eq!(clip.len(), 30);
    assert!((clip.fps - 30.0).abs() < 1e-9);
    assert!((clip.frames[0].translation[1] - doc.frames[0][1] * 0.01).abs() < 1e-12);
}
