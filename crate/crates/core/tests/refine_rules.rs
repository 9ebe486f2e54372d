use gesturekit::motion::{MotionClip, THUMB_JOINTS};
use gesturekit::refine::*;
use gesturekit::rotation::{rot6d_from_matrix, rotation_vector_to_matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// sup |F_n − F| by direct counting at every sample point and its left limit.
fn ks_oracle(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = samples.len() as f64;
    let mut best: f64 = 0.0;
    for &x in samples {
        let le = samples.iter().filter(|&&y| y <= x).count() as f64 / n;
        let lt = samples.iter().filter(|&&y| y < x).count() as f64 / n;
        let f = cdf(x);
        best = best.max((le - f).abs()).max((f - lt).abs());
    }
    best
}

fn standard_normal_quantile(p: f64) -> f64 {
    let fit = NormalFit { mu: 0.0, sigma: 1.0 };
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid, fit) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn ks_matches_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for &n in &[5usize, 37, 200, 1000] {
        let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..3.0) + rng.gen_range(0.0..1.0f64).powi(3)).collect();
        let fit = fit_normal(&xs).unwrap();
        let d = ks_normality_statistic(&xs).unwrap();
        let oracle = ks_oracle(&xs, |x| normal_cdf(x, fit));
        assert!((d - oracle).abs() < 1e-12, "n={n}: {d} vs {oracle}");
    }
}

#[test]
fn ks_at_exact_quantiles() {
    let n = 200;
    let xs: Vec<f64> = (1..=n).map(|i| standard_normal_quantile((i as f64 - 0.5) / n as f64)).collect();
    let d = ks_statistic_against(&xs, NormalFit { mu: 0.0, sigma: 1.0 });
    assert!(d <= 0.5 / n as f64 + 1e-12, "{d}");
    // With μ and σ re-estimated the sample σ shrinks below 1, so the bound no
    // longer holds; the fitted statistic is still checked against the oracle.
    let fit = fit_normal(&xs).unwrap();
    let fitted = ks_normality_statistic(&xs).unwrap();
    assert!((fitted - ks_oracle(&xs, |x| normal_cdf(x, fit))).abs() < 1e-12);
}

#[test]
fn ks_rejects_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs: Vec<f64> = (0..1000).map(|_| rng.gen::<f64>()).collect();
    assert!(ks_normality_statistic(&xs).unwrap() > 0.04);
}

fn random_clip(frames: usize, seed: u64, scale: f64) -> MotionClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clip = MotionClip::rest(frames, 30.0);
    for f in &mut clip.frames {
        for r in &mut f.rotations {
            let w = [rng.gen_range(-scale..scale), rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)];
            *r = rot6d_from_matrix(&rotation_vector_to_matrix(w)).unwrap();
        }
        for e in &mut f.expression {
            *e = rng.gen_range(-1.0..1.0);
        }
        f.translation = [rng.gen(), rng.gen(), rng.gen()];
    }
    clip
}

#[test]
fn finger_clamp_touches_only_fingers() {
    let clip = random_clip(40, 5, 1.0);
    let spec = FingerSpec::default_hands();
    let (out, stats) = clamp_fingers(&clip, &spec).unwrap();
    assert!(stats.frames_modified > 0);
    for (a, b) in clip.frames.iter().zip(&out.frames) {
        for j in 0..55 {
            let finger = spec.joints.contains(&j) && !THUMB_JOINTS.contains(&j);
            if !finger {
                assert_eq!(a.rotations[j].0.map(f64::to_bits), b.rotations[j].0.map(f64::to_bits), "joint {j}");
            }
        }
        assert_eq!(a.expression, b.expression);
        assert_eq!(a.translation, b.translation);
        assert_eq!(a.contacts, b.contacts);
    }
    let (twice, _) = clamp_fingers(&out, &spec).unwrap();
    for (a, b) in out.frames.iter().zip(&twice.frames) {
        for j in 0..55 {
            for c in 0..6 {
                assert!((a.rotations[j].0[c] - b.rotations[j].0[c]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn rotation_truncation_is_idempotent_for_fixed_fits() {
    let mut clip = random_clip(120, 9, 0.3);
    // inject outliers on a few channels
    for (t, j) in [(30usize, 3usize), (31, 3), (80, 12), (5, 0)] {
        clip.frames[t].rotations[j] = rot6d_from_matrix(&rotation_vector_to_matrix([1.5, 0.0, 0.0])).unwrap();
    }
    let fits = fit_rotation_channels(&clip).unwrap();
    let (once, stats) = truncate_rotations(&clip, &fits, BLEND_WINDOW, None).unwrap();
    assert!(stats.frames_modified > 0);
    let (twice, _) = truncate_rotations(&once, &fits, BLEND_WINDOW, None).unwrap();
    for (a, b) in once.frames.iter().zip(&twice.frames) {
        for j in 0..55 {
            for c in 0..6 {
                assert!((a.rotations[j].0[c] - b.rotations[j].0[c]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn spike_clipped_to_three_sigma() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut x: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // choose the spike so that it sits at exactly μ + 4σ of the final signal
    let (mut lo, mut hi) = (0.0, 100.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        x[100] = mid;
        let f = fit_normal(&x).unwrap();
        if (mid - f.mu) / f.sigma < 4.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let fit = fit_normal(&x).unwrap();
    assert!(((x[100] - fit.mu) / fit.sigma - 4.0).abs() < 1e-9);
    let y = truncate_3sigma(&x, BLEND_WINDOW).unwrap();
    assert_eq!(y[100], fit.mu + 3.0 * fit.sigma);
    // neighbors follow a linear ramp of the clip, unless held at the signal minimum
    let delta = x[100] - y[100];
    let w = BLEND_WINDOW as f64;
    let min_x = x.iter().copied().fold(f64::MAX, f64::min);
    for side in [-1i64, 1] {
        for k in 1..=BLEND_WINDOW {
            let i = (100 + side * k as i64) as usize;
            let ramp = 2.0 * (w + 1.0 - k as f64) / (w * (w + 1.0)) * delta;
            let shift = x[i] - y[i];
            assert!(shift >= 0.0 && shift <= ramp + 1e-12);
            if y[i] > min_x {
                assert!((shift - ramp).abs() < 1e-12);
            }
        }
    }
    assert_eq!(x[100 - BLEND_WINDOW - 1], y[100 - BLEND_WINDOW - 1]);
    let twice = truncate_3sigma_with(&y, fit, BLEND_WINDOW);
    assert_eq!(twice, y);
}

#[test]
fn head_rule_is_idempotent() {
    use gesturekit::motion::Skeleton;
    let sk = Skeleton::new(
        vec!["pelvis".into(), "spine".into(), "neck".into(), "head".into(), "leg".into()],
        vec![None, Some(0), Some(1), Some(2), Some(0)],
        vec![[0.0, 1.0, 0.0], [0.0, 0.4, 0.0], [0.0, 0.1, 0.0], [0.0, 0.3, 0.0], [0.1, -0.9, 0.0]],
    )
    .unwrap();
    let props = HeadProportions::new(2, 3, [0.0, 0.2, 0.0]);
    let once = enforce_head_ratio(&sk, &props).unwrap();
    assert!((once.ratio_after - HEAD_RATIO).abs() < 1e-9);
    let twice = enforce_head_ratio(&once.skeleton, &once.proportions).unwrap();
    assert_eq!(twice.skeleton, once.skeleton);
    assert_eq!(twice.scale, 1.0);
}

proptest! {
    #[test]
    fn truncation_mean_shift_bounded(values in prop::collection::vec(-1.0f64..1.0, 30..120), spike in 3.0f64..20.0, at in 0usize..1000) {
        let mut x = values;
        let i = at % x.len();
        x[i] = spike;
        let fit = match fit_normal(&x) { Ok(f) => f, Err(_) => return Ok(()) };
        let y = truncate_3sigma_with(&x, fit, BLEND_WINDOW);
        let n = x.len() as f64;
        let clip_mag: f64 = x.iter().map(|a| {
            let c = a.clamp(fit.mu - 3.0 * fit.sigma, fit.mu + 3.0 * fit.sigma);
            (c - a).abs()
        }).sum();
        let mean_x = x.iter().sum::<f64>() / n;
        let mean_y = y.iter().sum::<f64>() / n;
        prop_assert!((mean_x - mean_y).abs() <= 3.0 * clip_mag / n + 1e-12);
        let max_x = x.iter().copied().fold(f64::MIN, f64::max);
        prop_assert!(y.iter().all(|v| *v <= max_x));
        prop_assert_eq!(truncate_3sigma_with(&y, fit, BLEND_WINDOW), y);
    }
}
