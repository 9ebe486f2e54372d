use gesturekit::bvh::{skeleton_from_bvh, JointMap};
use gesturekit::metrics::*;
use gesturekit::motion::{MotionClip, Skeleton};
use gesturekit::rotation::{rot6d_from_matrix, RotationMatrix};
use gesturekit::synth::reference_rig_motion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rows(v: &[[f64; 3]]) -> EmbeddingSet {
    EmbeddingSet::new(v.iter().map(|r| r.to_vec()).collect()).unwrap()
}

fn skeleton() -> Skeleton {
    skeleton_from_bvh(&reference_rig_motion(1, 30.0, 0), &JointMap::reference_rig(), 0.01).unwrap()
}

#[test]
fn fgd_matches_matrix_sqrt_oracle() {
    let r = rows(&[[0.5, 1.0, -0.25], [1.5, -0.5, 0.75], [-1.0, 0.25, 1.0], [0.0, 2.0, 0.5], [2.0, -1.5, -1.0], [-0.75, 0.5, 0.0]]);
    let g = rows(&[[1.0, 0.0, 0.5], [-0.5, 1.5, 1.0], [2.5, -1.0, 0.0], [0.25, 0.75, -1.5], [1.0, 1.0, 1.0], [-2.0, 0.5, 0.25], [0.5, -0.25, 2.0]]);
    // scipy.linalg.sqrtm on the sample covariances
    let expected = 0.5802328765177548;
    assert!((fgd(&r, &g).unwrap() - expected).abs() < 1e-10);
    assert!((fgd(&g, &r).unwrap() - expected).abs() < 1e-10);
}

#[test]
fn fgd_of_a_set_with_itself_vanishes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = EmbeddingSet::new((0..200).map(|_| (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()).unwrap();
    assert!(fgd(&x, &x).unwrap().abs() < 1e-8);
    let small = EmbeddingSet::new((0..5).map(|_| (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()).unwrap();
    assert!(fgd(&small, &small).unwrap().abs() < 1e-8);
    assert!(fgd(&x, &small).unwrap() > 0.0);
}

#[test]
fn beat_constancy_properties() {
    let g = BeatSet::new(vec![0.4, 1.3, 2.2, 3.05]).unwrap();
    let a = BeatSet::new(vec![0.5, 1.25, 2.6]).unwrap();
    let base = beat_constancy(&g, &a, 0.1).unwrap();
    let shift = |b: &BeatSet, s: f64| BeatSet::new(b.times.iter().map(|t| t + s).collect()).unwrap();
    assert!((beat_constancy(&shift(&g, 7.5), &shift(&a, 7.5), 0.1).unwrap() - base).abs() < 1e-12);
    let more = BeatSet::new(vec![0.5, 1.25, 2.2, 2.6]).unwrap();
    assert!(beat_constancy(&g, &more, 0.1).unwrap() >= base);
    assert!((0.0..=1.0).contains(&base));
    let exact = (-(0.01f64) / 0.02).exp();
    assert!((beat_constancy(&BeatSet::new(vec![0.4]).unwrap(), &a, 0.1).unwrap() - exact).abs() < 1e-12);
}

#[test]
fn sinusoid_speed_troughs() {
    // zeros of |sin| fall 0.3 frames before every 15th frame
    let speed: Vec<f64> = (0..91).map(|t| (std::f64::consts::PI * (t as f64 + 0.3) / 15.0).sin().abs()).collect();
    assert_eq!(velocity_minima(&speed, DEFAULT_BEAT_THRESHOLD), vec![15, 30, 45, 60, 75]);
}

#[test]
fn diversity_cases() {
    let a: Track = vec![vec![[0.0, 0.0, 0.0]]];
    let b: Track = vec![vec![[1.0, 2.0, -3.0]]];
    // ordered pairs (a,b),(b,a) each 6, divided by 2·2·1
    assert_eq!(l1_diversity(&[a.clone(), b.clone()]).unwrap(), 3.0);
    assert_eq!(l1_diversity(&[a.clone(), a.clone(), a.clone()]).unwrap(), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tracks: Vec<Track> = (0..4).map(|_| (0..5).map(|_| (0..3).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()).collect()).collect();
    let d = l1_diversity(&tracks).unwrap();
    let scaled: Vec<Track> = tracks.iter().map(|t| t.iter().map(|f| f.iter().map(|p| [2.0 * p[0], 2.0 * p[1], 2.0 * p[2]]).collect()).collect()).collect();
    assert!((l1_diversity(&scaled).unwrap() - 2.0 * d).abs() < 1e-12);
    let permuted = vec![tracks[2].clone(), tracks[0].clone(), tracks[3].clone(), tracks[1].clone()];
    assert!((l1_diversity(&permuted).unwrap() - d).abs() < 1e-12);
    assert!(l1_diversity(&[a]).is_err());
}

#[test]
fn lvd_ignores_constant_offsets() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // dyadic coordinates keep every subtraction exact
    let mut dyadic = || (rng.gen_range(-512..512) as f64) / 1024.0;
    let gt: Track = (0..10).map(|_| (0..6).map(|_| [dyadic(), dyadic(), dyadic()]).collect()).collect();
    let pred: Track = (0..10).map(|_| (0..6).map(|_| [dyadic(), dyadic(), dyadic()]).collect()).collect();
    let base = lvd(&gt, &pred).unwrap();
    let offset: Track = pred.iter().map(|f| f.iter().map(|p| [p[0] + 0.25, p[1] - 0.5, p[2] + 0.125]).collect()).collect();
    assert_eq!(lvd(&gt, &offset).unwrap(), base);
    assert_eq!(lvd(&gt, &gt).unwrap(), 0.0);
}

fn walking_clip(step: f64, contacts: f64) -> MotionClip {
    let mut clip = MotionClip::rest(20, 30.0);
    for (t, f) in clip.frames.iter_mut().enumerate() {
        f.translation = [step * t as f64, 0.0, 0.0];
        f.contacts = [contacts; 4];
    }
    clip
}

#[test]
fn foot_slide_reports_planted_drift() {
    let skel = skeleton();
    let s = foot_slide(&walking_clip(0.01, 1.0), &skel, 1, None).unwrap();
    assert!((s.mean - 0.01).abs() < 1e-12);
    assert_eq!(s.contact_steps, 19 * 4);
    let none = foot_slide(&walking_clip(0.01, 0.0), &skel, 1, None).unwrap();
    assert!(none.no_contact);
    assert_eq!(none.mean, 0.0);
}

#[test]
fn motion_beats_from_a_swinging_arm() {
    let skel = skeleton();
    let mut clip = MotionClip::rest(90, 30.0);
    for (t, f) in clip.frames.iter_mut().enumerate() {
        let angle = 0.6 * (std::f64::consts::TAU * t as f64 / 30.0).sin();
        f.rotations[18] = rot6d_from_matrix(&RotationMatrix::about_z(angle)).unwrap();
    }
    let beats = extract_motion_beats(&clip, &skel, &[20], DEFAULT_BEAT_THRESHOLD).unwrap();
    // speed troughs at the swing extremes, every half period
    let expected = [7.5, 22.5, 37.5, 52.5, 67.5, 82.5];
    assert_eq!(beats.len(), expected.len());
    for (b, e) in beats.times.iter().zip(expected) {
        assert!((b * 30.0 - e).abs() <= 0.5 + 1e-9);
    }
}

#[test]
fn embedding_container_round_trip() {
    let set = rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.5]]);
    assert_eq!(EmbeddingSet::from_container(&set.to_container()).unwrap(), set);
}
