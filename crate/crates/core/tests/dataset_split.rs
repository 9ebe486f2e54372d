use gesturekit::dataset::*;

fn manifest(speakers: &[(&str, usize)]) -> DatasetManifest {
    let sequences = speakers
        .iter()
        .flat_map(|(s, n)| {
            (0..*n).map(move |i| SequenceEntry {
                speaker_id: s.to_string(),
                sequence_id: format!("{s}-{i}"),
                duration_s: 5.0 + i as f64,
                motion: format!("motion/{s}-{i}.bvh").into(),
                audio: Some(format!("audio/{s}-{i}.wav").into()),
                ..Default::default()
            })
        })
        .collect();
    DatasetManifest { sequences }
}

#[test]
fn per_speaker_ratios_stay_within_one_sequence() {
    let m = manifest(&[("a", 14), ("b", 23), ("c", 57), ("d", 100), ("e", 2)]);
    let (out, warnings) = split_dataset(&m, DEFAULT_RATIOS, 11).unwrap();
    assert_eq!(warnings.len(), 1);
    for (speaker, n) in [("a", 14), ("b", 23), ("c", 57), ("d", 100)] {
        let count = |s: Split| out.sequences.iter().filter(|e| e.speaker_id == speaker && e.split == Some(s)).count();
        for (split, r) in [(Split::Train, 0.85), (Split::Val, 0.075), (Split::Test, 0.075)] {
            assert!((count(split) as f64 - r * n as f64).abs() <= 1.0, "{speaker} {split:?}");
        }
    }
    assert!(out.sequences.iter().all(|s| s.split.is_some()));
}

#[test]
fn split_is_deterministic_and_seed_dependent() {
    let m = manifest(&[("a", 40)]);
    let a = split_dataset(&m, DEFAULT_RATIOS, 5).unwrap().0.to_json();
    let b = split_dataset(&m, DEFAULT_RATIOS, 5).unwrap().0.to_json();
    assert_eq!(a.as_bytes(), b.as_bytes());
    let c = split_dataset(&m, DEFAULT_RATIOS, 6).unwrap().0.to_json();
    assert_ne!(a, c);
    // input order does not matter
    let mut rev = m.clone();
    rev.sequences.reverse();
    let (r, _) = split_dataset(&rev, DEFAULT_RATIOS, 5).unwrap();
    let (f, _) = split_dataset(&m, DEFAULT_RATIOS, 5).unwrap();
    for s in &f.sequences {
        let other = r.sequences.iter().find(|o| o.sequence_id == s.sequence_id).unwrap();
        assert_eq!(s.split, other.split);
    }
}

#[test]
fn bad_ratios_rejected() {
    assert!(split_dataset(&manifest(&[("a", 5)]), [0.5, 0.5, 0.5], 0).is_err());
    assert!(split_dataset(&manifest(&[("a", 5)]), [1.2, -0.1, -0.1], 0).is_err());
}

#[test]
fn manifest_json_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(&[("a", 2)]);
    let p = dir.path().join("manifest.json");
    std::fs::write(&p, m.to_json()).unwrap();
    assert_eq!(DatasetManifest::read(&p).unwrap(), m);
    assert!(matches!(m.validate(dir.path()), Err(DatasetError::MissingFile { .. })));
    for s in &m.sequences {
        for f in [Some(&s.motion), s.audio.as_ref()].into_iter().flatten() {
            let full = dir.path().join(f);
            std::fs::create_dir_all(full.parent().unwrap()).unwrap();
            std::fs::write(full, "").unwrap();
        }
    }
    m.validate(dir.path()).unwrap();
    std::fs::write(&p, r#"{"sequences": [], "extra": 1}"#).unwrap();
    assert!(DatasetManifest::read(&p).is_err());
}

#[test]
fn mask_ratio_is_monotone_and_set_sizes_track_it() {
    let total = 137;
    let mut last = -1.0;
    for epoch in 0..=total + 10 {
        let plan = mask_plan(epoch, total, 91, 55, 4);
        assert!(plan.ratio >= last);
        last = plan.ratio;
        assert!((plan.masked_frames.len() as f64 / 91.0 - plan.ratio).abs() <= 1.0 / 91.0);
        assert!((plan.masked_joints.len() as f64 / 55.0 - plan.ratio).abs() <= 1.0 / 55.0);
        assert!(plan.masked_frames.windows(2).all(|w| w[0] < w[1]));
        assert!(plan.masked_joints.iter().all(|&j| j < 55));
    }
    assert_eq!(last, 0.95);
}

#[test]
fn mask_plan_is_seeded() {
    let a = serde_json::to_string(&mask_plan(50, 100, 300, 55, 9)).unwrap();
    let b = serde_json::to_string(&mask_plan(50, 100, 300, 55, 9)).unwrap();
    assert_eq!(a.as_bytes(), b.as_bytes());
    assert_ne!(mask_plan(50, 100, 300, 55, 9).masked_frames, mask_plan(51, 100, 300, 55, 9).masked_frames);
    assert_ne!(mask_plan(50, 100, 300, 55, 9).masked_frames, mask_plan(50, 100, 300, 55, 10).masked_frames);
}
