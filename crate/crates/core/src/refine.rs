//! Physical refinement rules: head/neck proportion, finger hyperextension and
//! Gaussian outlier truncation of rotation channels.

use crate::motion::{MotionClip, MotionError, Skeleton, LEFT_HAND_JOINTS, RIGHT_HAND_JOINTS, THUMB_JOINTS};
use crate::rotation::{matrix_from_rot6d, matrix_to_rotation_vector, rot6d_from_matrix, rotation_vector_to_matrix};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HEAD_RATIO: f64 = 1.0 / 7.0;
pub const BLEND_WINDOW: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum RefineError {
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("degenerate distribution: zero variance")]
    Degenerate,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("invalid rule configuration: {0}")]
    Config(String),
    #[error("motion: {0}")]
    Motion(String),
}

impl From<MotionError> for RefineError {
    fn from(e: MotionError) -> Self {
        RefineError::Motion(e.to_string())
    }
}

/// Where the neck/head measurement is taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadProportions {
    pub neck: usize,
    pub head: usize,
    /// Top of the skull relative to the head joint, in the skeleton's rest frame.
    pub head_top_offset: [f64; 3],
    pub up_axis: usize,
    pub target: f64,
    pub tol: f64,
}

impl HeadProportions {
    pub fn new(neck: usize, head: usize, head_top_offset: [f64; 3]) -> Self {
        HeadProportions { neck, head, head_top_offset, up_axis: 1, target: HEAD_RATIO, tol: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadRatioOutcome {
    pub skeleton: Skeleton,
    pub proportions: HeadProportions,
    pub scale: f64,
    pub ratio_before: f64,
    pub ratio_after: f64,
}

fn subtree(skeleton: &Skeleton, root: usize) -> Vec<bool> {
    let mut inside = vec![false; skeleton.len()];
    inside[root] = true;
    // Parents precede children.
    for j in 0..skeleton.len() {
        if let Some(p) = skeleton.parents[j] {
            if inside[p] {
                inside[j] = true;
            }
        }
    }
    inside
}

/// (neck-to-head-top length) / (total body height), both along the up axis at rest.
pub fn head_ratio(skeleton: &Skeleton, props: &HeadProportions) -> Result<f64, RefineError> {
    let n = skeleton.len();
    if props.neck >= n || props.head >= n || props.up_axis > 2 {
        return Err(RefineError::InvalidSkeleton("head proportion indices out of range".into()));
    }
    if !subtree(skeleton, props.neck)[props.head] {
        return Err(RefineError::InvalidSkeleton("head joint is not below the neck".into()));
    }
    let rest = skeleton.rest_positions();
    let up = props.up_axis;
    let top = rest[props.head][up] + props.head_top_offset[up];
    let mut lo = top;
    let mut hi = top;
    for p in &rest {
        lo = lo.min(p[up]);
        hi = hi.max(p[up]);
    }
    let total = hi - lo;
    if !(total > 0.0) {
        return Err(RefineError::InvalidSkeleton("zero total length".into()));
    }
    let head = top - rest[props.neck][up];
    if !(head > 0.0) {
        return Err(RefineError::InvalidSkeleton("head top is not above the neck".into()));
    }
    Ok(head / total)
}

fn scaled(skeleton: &Skeleton, props: &HeadProportions, s: f64) -> (Skeleton, HeadProportions) {
    let inside = subtree(skeleton, props.neck);
    let mut sk = skeleton.clone();
    for j in 0..sk.len() {
        if inside[j] && j != props.neck {
            sk.offsets[j] = sk.offsets[j].map(|v| v * s);
        }
    }
    let mut p = props.clone();
    p.head_top_offset = p.head_top_offset.map(|v| v * s);
    (sk, p)
}

/// Uniformly rescales the bones below the neck (and the head top) so the
/// neck/head ratio reaches the target. Poses are untouched. A skeleton already
/// within the tolerance band is returned unchanged.
pub fn enforce_head_ratio(skeleton: &Skeleton, props: &HeadProportions) -> Result<HeadRatioOutcome, RefineError> {
    if !(props.target > 0.0 && props.target < 1.0) || !(props.tol >= 0.0) {
        return Err(RefineError::Config("head ratio target must lie in (0, 1)".into()));
    }
    let before = head_ratio(skeleton, props)?;
    let unchanged = HeadRatioOutcome {
        skeleton: skeleton.clone(),
        proportions: props.clone(),
        scale: 1.0,
        ratio_before: before,
        ratio_after: before,
    };
    if (before - props.target).abs() <= props.target * props.tol {
        return Ok(unchanged);
    }
    let ratio_at = |s: f64| {
        let (sk, p) = scaled(skeleton, props, s);
        head_ratio(&sk, &p)
    };
    // The ratio grows monotonically with the scale; bisect in log space.
    let (mut lo, mut hi) = (-20f64, 20f64);
    if ratio_at(lo.exp())? > props.target || ratio_at(hi.exp())? < props.target {
        return Err(RefineError::InvalidSkeleton("target ratio unreachable by scaling the head".into()));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio_at(mid.exp())? < props.target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = (0.5 * (lo + hi)).exp();
    let (sk, p) = scaled(skeleton, props, s);
    let after = head_ratio(&sk, &p)?;
    Ok(HeadRatioOutcome { skeleton: sk, proportions: p, scale: s, ratio_before: before, ratio_after: after })
}

/// Finger joints with their flexion axes (in the joint's local frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerSpec {
    pub joints: Vec<usize>,
    pub flexion_axes: Vec<[f64; 3]>,
    pub thumbs: Vec<usize>,
}

impl FingerSpec {
    /// Default hand layout: flexion about −z on the left hand and +z on the
    /// right (fingers curl downward from a T-pose with y up).
    pub fn default_hands() -> Self {
        let mut joints = Vec::new();
        let mut flexion_axes = Vec::new();
        for j in LEFT_HAND_JOINTS {
            joints.push(j);
            flexion_axes.push([0.0, 0.0, -1.0]);
        }
        for j in RIGHT_HAND_JOINTS {
            joints.push(j);
            flexion_axes.push([0.0, 0.0, 1.0]);
        }
        FingerSpec { joints, flexion_axes, thumbs: THUMB_JOINTS.to_vec() }
    }

    fn validate(&self) -> Result<(), RefineError> {
        if self.joints.len() != self.flexion_axes.len() {
            return Err(RefineError::Config("one flexion axis per finger joint required".into()));
        }
        for a in &self.flexion_axes {
            let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(RefineError::Config("flexion axes must be unit vectors".into()));
            }
        }
        Ok(())
    }
}

/// Flexion angle: the rotation-vector component along the flexion axis.
pub fn flexion_angle(rotation_vector: [f64; 3], axis: [f64; 3]) -> f64 {
    rotation_vector[0] * axis[0] + rotation_vector[1] * axis[1] + rotation_vector[2] * axis[2]
}

/// Removes backward bending of every non-thumb finger joint. Entries that
/// need no change keep their exact bits.
pub fn clamp_fingers(clip: &MotionClip, spec: &FingerSpec) -> Result<(MotionClip, RuleStats), RefineError> {
    spec.validate()?;
    let mut out = clip.clone();
    let mut stats = RuleStats::default();
    for frame in out.frames.iter_mut() {
        let mut touched = false;
        for (&j, &axis) in spec.joints.iter().zip(&spec.flexion_axes) {
            if spec.thumbs.contains(&j) || j >= frame.rotations.len() {
                continue;
            }
            let r = matrix_from_rot6d(&frame.rotations[j]).map_err(|e| RefineError::Motion(e.to_string()))?;
            let w = matrix_to_rotation_vector(&r);
            let flex = flexion_angle(w, axis);
            if flex < 0.0 {
                let clamped = [w[0] - flex * axis[0], w[1] - flex * axis[1], w[2] - flex * axis[2]];
                frame.rotations[j] = rot6d_from_matrix(&rotation_vector_to_matrix(clamped)).map_err(|e| RefineError::Motion(e.to_string()))?;
                stats.max_adjustment = stats.max_adjustment.max(-flex);
                touched = true;
            }
        }
        if touched {
            stats.frames_modified += 1;
        }
    }
    Ok((out, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalFit {
    pub mu: f64,
    pub sigma: f64,
}

/// Mean and sample standard deviation (n − 1).
pub fn fit_normal(samples: &[f64]) -> Result<NormalFit, RefineError> {
    if samples.len() < 2 {
        return Err(RefineError::TooFewSamples { needed: 2, got: samples.len() });
    }
    let n = samples.len() as f64;
    let mu = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0);
    let sigma = var.sqrt();
    if !(sigma > 0.0) {
        return Err(RefineError::Degenerate);
    }
    Ok(NormalFit { mu, sigma })
}

pub fn normal_cdf(x: f64, fit: NormalFit) -> f64 {
    0.5 * libm::erfc(-(x - fit.mu) / (fit.sigma * std::f64::consts::SQRT_2))
}

/// Kolmogorov–Smirnov distance between the samples and a given normal.
pub fn ks_statistic_against(samples: &[f64], fit: NormalFit) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x, fit);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// KS distance to the normal fitted to the samples themselves.
pub fn ks_normality_statistic(samples: &[f64]) -> Result<f64, RefineError> {
    if samples.len() < 5 {
        return Err(RefineError::TooFewSamples { needed: 5, got: samples.len() });
    }
    Ok(ks_statistic_against(samples, fit_normal(samples)?))
}

/// Clips values outside `μ ± 3σ` and spreads each clip's correction over the
/// `window` neighboring unclipped frames on both sides with a linear ramp
/// whose weights sum to one per side. Idempotent for a fixed `fit`.
pub fn truncate_3sigma_with(signal: &[f64], fit: NormalFit, window: usize) -> Vec<f64> {
    let lo = fit.mu - 3.0 * fit.sigma;
    let hi = fit.mu + 3.0 * fit.sigma;
    let clipped: Vec<bool> = signal.iter().map(|&x| x < lo || x > hi).collect();
    if !clipped.iter().any(|&c| c) {
        return signal.to_vec();
    }
    let mut out: Vec<f64> = signal.iter().map(|&x| x.clamp(lo, hi)).collect();
    let n = signal.len();
    let w = window as f64;
    let ramp = |k: usize| 2.0 * (w + 1.0 - k as f64) / (w * (w + 1.0));
    let mut i = 0;
    while i < n {
        if !clipped[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && clipped[i] {
            i += 1;
        }
        let end = i - 1;
        let delta_start = out[start] - signal[start];
        let delta_end = out[end] - signal[end];
        for k in 1..=window {
            if start >= k && !clipped[start - k] {
                out[start - k] += ramp(k) * delta_start;
            }
            if end + k < n && !clipped[end + k] {
                out[end + k] += ramp(k) * delta_end;
            }
        }
    }
    let (min_x, max_x) = signal.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let (floor, ceil) = (min_x.max(lo), max_x.min(hi));
    for (o, &c) in out.iter_mut().zip(&clipped) {
        if !c {
            *o = o.clamp(floor, ceil);
        }
    }
    out
}

pub fn truncate_3sigma(signal: &[f64], window: usize) -> Result<Vec<f64>, RefineError> {
    if signal.len() <= 2 * window {
        return Err(RefineError::TooFewSamples { needed: 2 * window + 1, got: signal.len() });
    }
    match fit_normal(signal) {
        Ok(fit) => Ok(truncate_3sigma_with(signal, fit, window)),
        Err(RefineError::Degenerate) => Ok(signal.to_vec()),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RuleStats {
    pub frames_modified: usize,
    pub max_adjustment: f64,
}

/// Per-channel normal fits of the axis-angle rotation channels
/// (`joint * 3 + component`); `None` for constant channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelFits {
    pub fits: Vec<Option<NormalFit>>,
    pub ks: Vec<Option<f64>>,
}

fn rotation_channels(clip: &MotionClip) -> Result<Vec<Vec<[f64; 3]>>, RefineError> {
    clip.frames
        .iter()
        .map(|f| {
            f.rotations
                .iter()
                .map(|r| matrix_from_rot6d(r).map(|m| matrix_to_rotation_vector(&m)).map_err(|e| RefineError::Motion(e.to_string())))
                .collect()
        })
        .collect()
}

pub fn fit_rotation_channels(clip: &MotionClip) -> Result<ChannelFits, RefineError> {
    let aa = rotation_channels(clip)?;
    let joints = clip.frames.first().map_or(0, |f| f.rotations.len());
    let mut fits = Vec::with_capacity(joints * 3);
    let mut ks = Vec::with_capacity(joints * 3);
    for j in 0..joints {
        for c in 0..3 {
            let series: Vec<f64> = aa.iter().map(|f| f[j][c]).collect();
            match fit_normal(&series) {
                Ok(fit) => {
                    fits.push(Some(fit));
                    ks.push(if series.len() >= 5 { Some(ks_statistic_against(&series, fit)) } else { None });
                }
                Err(RefineError::Degenerate) => {
                    fits.push(None);
                    ks.push(None);
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(ChannelFits { fits, ks })
}

/// Applies 3σ truncation to every rotation channel whose KS distance is at
/// most `ks_gate` (all fitted channels when `None`). Only (frame, joint)
/// entries whose axis-angle values changed are rewritten.
pub fn truncate_rotations(
    clip: &MotionClip,
    fits: &ChannelFits,
    window: usize,
    ks_gate: Option<f64>,
) -> Result<(MotionClip, RuleStats), RefineError> {
    if clip.len() <= 2 * window {
        return Err(RefineError::TooFewSamples { needed: 2 * window + 1, got: clip.len() });
    }
    let aa = rotation_channels(clip)?;
    let joints = clip.frames[0].rotations.len();
    if fits.fits.len() != joints * 3 {
        return Err(RefineError::Config("channel fits do not match the clip".into()));
    }
    let mut new_aa = aa.clone();
    let mut stats = RuleStats::default();
    for j in 0..joints {
        for c in 0..3 {
            let ch = j * 3 + c;
            let Some(fit) = fits.fits[ch] else { continue };
            if let (Some(gate), Some(d)) = (ks_gate, fits.ks[ch]) {
                if d > gate {
                    continue;
                }
            }
            let series: Vec<f64> = aa.iter().map(|f| f[j][c]).collect();
            let out = truncate_3sigma_with(&series, fit, window);
            for (t, v) in out.into_iter().enumerate() {
                new_aa[t][j][c] = v;
            }
        }
    }
    let mut out = clip.clone();
    for (t, frame) in out.frames.iter_mut().enumerate() {
        let mut touched = false;
        for j in 0..joints {
            if new_aa[t][j] != aa[t][j] {
                let adj = (0..3).map(|c| (new_aa[t][j][c] - aa[t][j][c]).abs()).fold(0.0, f64::max);
                stats.max_adjustment = stats.max_adjustment.max(adj);
                frame.rotations[j] = rot6d_from_matrix(&rotation_vector_to_matrix(new_aa[t][j])).map_err(|e| RefineError::Motion(e.to_string()))?;
                touched = true;
            }
        }
        if touched {
            stats.frames_modified += 1;
        }
    }
    Ok((out, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Head,
    Fingers,
    Ks3Sigma,
}

/// Parses a comma-separated rule list such as `head,fingers,ks3sigma`.
pub fn parse_rules(s: &str) -> Result<Vec<Rule>, RefineError> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| match p {
            "head" => Ok(Rule::Head),
            "fingers" => Ok(Rule::Fingers),
            "ks3sigma" => Ok(Rule::Ks3Sigma),
            other => Err(RefineError::Config(format!("unknown rule '{other}'"))),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub rules: Vec<Rule>,
    pub head: RuleStats,
    pub fingers: RuleStats,
    pub truncation: RuleStats,
    pub head_scale: f64,
    pub head_ratio_before: Option<f64>,
    pub head_ratio_after: Option<f64>,
    pub ks_max: Option<f64>,
    pub ks_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    pub rules: Vec<Rule>,
    pub fingers: FingerSpec,
    pub head: Option<HeadProportions>,
    pub window: usize,
    pub ks_gate: Option<f64>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            rules: vec![Rule::Head, Rule::Fingers, Rule::Ks3Sigma],
            fingers: FingerSpec::default_hands(),
            head: None,
            window: BLEND_WINDOW,
            ks_gate: None,
        }
    }
}

/// Runs the selected rules in the order head, fingers, truncation.
pub fn refine(clip: &MotionClip, skeleton: &Skeleton, config: &RefineConfig) -> Result<(MotionClip, Skeleton, RefineReport), RefineError> {
    let mut report = RefineReport {
        rules: config.rules.clone(),
        head: RuleStats::default(),
        fingers: RuleStats::default(),
        truncation: RuleStats::default(),
        head_scale: 1.0,
        head_ratio_before: None,
        head_ratio_after: None,
        ks_max: None,
        ks_mean: None,
    };
    let mut skeleton = skeleton.clone();
    let mut clip = clip.clone();
    if config.rules.contains(&Rule::Head) {
        let props = config.head.as_ref().ok_or_else(|| RefineError::Config("head rule needs head proportions".into()))?;
        let o = enforce_head_ratio(&skeleton, props)?;
        report.head_scale = o.scale;
        report.head.max_adjustment = (o.scale - 1.0).abs();
        report.head_ratio_before = Some(o.ratio_before);
        report.head_ratio_after = Some(o.ratio_after);
        skeleton = o.skeleton;
    }
    if config.rules.contains(&Rule::Fingers) {
        let (c, s) = clamp_fingers(&clip, &config.fingers)?;
        clip = c;
        report.fingers = s;
    }
    if config.rules.contains(&Rule::Ks3Sigma) {
        let fits = fit_rotation_channels(&clip)?;
        let ks: Vec<f64> = fits.ks.iter().flatten().copied().collect();
        if !ks.is_empty() {
            report.ks_max = Some(ks.iter().copied().fold(0.0, f64::max));
            report.ks_mean = Some(ks.iter().sum::<f64>() / ks.len() as f64);
        }
        let (c, s) = truncate_rotations(&clip, &fits, config.window, config.ks_gate)?;
        clip = c;
        report.truncation = s;
    }
    Ok((clip, skeleton, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(height_neck: f64, height_head: f64) -> (Skeleton, HeadProportions) {
        // feet at 0, pelvis at 0.5, neck, head
        let sk = Skeleton::new(
            vec!["foot".into(), "pelvis".into(), "neck".into(), "head".into()],
            vec![None, Some(0), Some(1), Some(2)],
            vec![[0.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, height_neck - 0.5, 0.0], [0.0, height_head - height_neck, 0.0]],
        )
        .unwrap();
        (sk, HeadProportions::new(2, 3, [0.0, 0.0, 0.0]))
    }

    #[test]
    fn head_ratio_fixed_point() {
        // neck at 6, head top at 7 -> ratio 1/7
        let (sk, props) = column(6.0, 7.0);
        assert!((head_ratio(&sk, &props).unwrap() - HEAD_RATIO).abs() < 1e-15);
        let o = enforce_head_ratio(&sk, &props).unwrap();
        assert_eq!(o.skeleton, sk);
        assert_eq!(o.scale, 1.0);
    }

    #[test]
    fn head_ratio_from_030() {
        // neck at 0.7, head top at 1.0 -> 0.30
        let (sk, props) = column(0.7, 1.0);
        assert!((head_ratio(&sk, &props).unwrap() - 0.30).abs() < 1e-12);
        let o = enforce_head_ratio(&sk, &props).unwrap();
        assert!((o.ratio_after - HEAD_RATIO).abs() <= 0.05 * HEAD_RATIO);
        // closed form for this column: s·0.3 / (0.7 + s·0.3) = 1/7
        let s = 0.7 / (6.0 * 0.3);
        assert!((o.scale - s).abs() < 1e-9);
        let again = enforce_head_ratio(&o.skeleton, &o.proportions).unwrap();
        assert_eq!(again.skeleton, o.skeleton);
        // pelvis and neck bones are untouched
        assert_eq!(o.skeleton.offsets[..3], sk.offsets[..3]);
    }

    #[test]
    fn zero_height_skeleton_rejected() {
        let sk = Skeleton::new(vec!["a".into(), "b".into()], vec![None, Some(0)], vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let props = HeadProportions::new(0, 1, [0.0; 3]);
        assert!(matches!(head_ratio(&sk, &props), Err(RefineError::InvalidSkeleton(_))));
    }

    fn finger_clip(joint: usize, flex: f64, axis: [f64; 3]) -> MotionClip {
        let mut clip = MotionClip::rest(1, 30.0);
        let w = [axis[0] * flex, axis[1] * flex, axis[2] * flex];
        clip.frames[0].rotations[joint] = rot6d_from_matrix(&rotation_vector_to_matrix(w)).unwrap();
        clip
    }

    fn flex_of(clip: &MotionClip, joint: usize, axis: [f64; 3]) -> f64 {
        let w = matrix_to_rotation_vector(&matrix_from_rot6d(&clip.frames[0].rotations[joint]).unwrap());
        flexion_angle(w, axis)
    }

    #[test]
    fn finger_hand_cases() {
        let spec = FingerSpec::default_hands();
        let axis = [0.0, 0.0, -1.0];
        let (c, s) = clamp_fingers(&finger_clip(25, (-10f64).to_radians(), axis), &spec).unwrap();
        assert!(flex_of(&c, 25, axis).abs() < 1e-12);
        assert_eq!(s.frames_modified, 1);
        let src = finger_clip(25, 30f64.to_radians(), axis);
        let (c, s) = clamp_fingers(&src, &spec).unwrap();
        assert_eq!(c, src);
        assert_eq!(s.frames_modified, 0);
        let thumb = finger_clip(37, (-10f64).to_radians(), axis);
        assert_eq!(clamp_fingers(&thumb, &spec).unwrap().0, thumb);
    }

    #[test]
    fn ks_degenerate_and_small() {
        assert_eq!(ks_normality_statistic(&[2.0; 10]), Err(RefineError::Degenerate));
        assert!(matches!(ks_normality_statistic(&[1.0, 2.0]), Err(RefineError::TooFewSamples { .. })));
    }

    #[test]
    fn truncation_hand_cases() {
        let mut x: Vec<f64> = (0..60).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect();
        assert_eq!(truncate_3sigma(&x, 10).unwrap(), x);
        let fit = fit_normal(&x).unwrap();
        x[30] = fit.mu + 4.0 * fit.sigma;
        let fit = fit_normal(&x).unwrap();
        // the spike still lies beyond 3σ of the refitted distribution
        assert!(x[30] > fit.mu + 3.0 * fit.sigma);
        let y = truncate_3sigma(&x, 10).unwrap();
        assert_eq!(y[30], fit.mu + 3.0 * fit.sigma);
        assert_eq!(truncate_3sigma_with(&y, fit, 10), y);
        assert!(y.iter().all(|v| *v <= x.iter().copied().fold(f64::MIN, f64::max)));
        assert!(matches!(truncate_3sigma(&x[..20], 10), Err(RefineError::TooFewSamples { .. })));
    }

    #[test]
    fn rule_list_parsing() {
        assert_eq!(parse_rules("head, fingers,ks3sigma").unwrap(), vec![Rule::Head, Rule::Fingers, Rule::Ks3Sigma]);
        assert!(parse_rules("head,nope").is_err());
    }
}
