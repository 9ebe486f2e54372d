//! Evaluation metrics: Fréchet gesture distance, beat constancy, L1
//! diversity, vertex errors and foot sliding.

use crate::container::{Container, ContainerError};
use crate::motion::{MotionClip, MotionError, Skeleton, CONTACT_JOINTS, NUM_JOINTS};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_BC_SIGMA: f64 = 0.1;
pub const DEFAULT_BEAT_THRESHOLD: f64 = 0.1;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("invalid beat set: {0}")]
    Beats(String),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// `N × E` feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub features: Vec<Vec<f64>>,
}

impl EmbeddingSet {
    pub fn new(features: Vec<Vec<f64>>) -> Result<Self, MetricError> {
        if features.len() < 2 {
            return Err(MetricError::Undefined(format!("moment estimation needs at least 2 samples, got {}", features.len())));
        }
        let e = features[0].len();
        if features.iter().any(|f| f.len() != e) {
            return Err(MetricError::Shape("embedding rows differ in width".into()));
        }
        Ok(EmbeddingSet { features })
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    /// Mean and covariance with the `1/(N−1)` normalization.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.features.len();
        let e = self.dim();
        let mut mu = DVector::zeros(e);
        for f in &self.features {
            mu += DVector::from_column_slice(f);
        }
        mu /= n as f64;
        let mut cov = DMatrix::zeros(e, e);
        for f in &self.features {
            let d = DVector::from_column_slice(f) - &mu;
            cov.ger(1.0, &d, &d, 1.0);
        }
        cov /= (n - 1) as f64;
        (mu, cov)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("embeddings");
        c.push("features", &[self.features.len(), self.dim()], self.features.concat()).expect("shape");
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, MetricError> {
        c.expect_kind("embeddings")?;
        let (shape, data) = c.array_shaped("features", &[None, None])?;
        EmbeddingSet::new((0..shape[0]).map(|r| data[r * shape[1]..(r + 1) * shape[1]].to_vec()).collect())
    }
}

/// Square root of a symmetric PSD matrix; negative eigenvalues are clamped.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    // eigenvalues within rounding noise of zero are treated as zero
    let floor = m.nrows() as f64 * f64::EPSILON * eig.eigenvalues.amax();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| if l > floor { l.sqrt() } else { 0.0 }));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// `‖μr − μg‖² + Tr(Σr + Σg − 2 (Σr Σg)^{1/2})`, with the trace of the
/// product root taken from `√Σr Σg √Σr`.
pub fn fgd(real: &EmbeddingSet, gen: &EmbeddingSet) -> Result<f64, MetricError> {
    if real.dim() != gen.dim() {
        return Err(MetricError::Shape(format!("feature widths {} and {}", real.dim(), gen.dim())));
    }
    for (name, s) in [("real", real), ("generated", gen)] {
        if s.dim() > s.features.len() {
            log::warn!("{name} embeddings: dimension {} exceeds sample count {}; covariance is singular", s.dim(), s.features.len());
        }
    }
    let (mu_r, cov_r) = real.moments();
    let (mu_g, cov_g) = gen.moments();
    let root_r = psd_sqrt(&cov_r);
    let inner = &root_r * &cov_g * &root_r;
    let cross = psd_sqrt(&inner).trace();
    let mean_term = (&mu_r - &mu_g).norm_squared();
    Ok(mean_term + cov_r.trace() + cov_g.trace() - 2.0 * cross)
}

/// Sorted, strictly increasing times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatSet {
    pub times: Vec<f64>,
}

impl BeatSet {
    pub fn new(times: Vec<f64>) -> Result<Self, MetricError> {
        if times.iter().any(|t| !t.is_finite()) {
            return Err(MetricError::Beats("non-finite beat time".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MetricError::Beats("times must be strictly increasing".into()));
        }
        Ok(BeatSet { times })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// `(1/|g|) Σ_g exp(−min_a (t_g − t_a)² / 2σ²)`.
pub fn beat_constancy(gesture: &BeatSet, audio: &BeatSet, sigma: f64) -> Result<f64, MetricError> {
    if gesture.is_empty() {
        return Err(MetricError::Undefined("no gesture beats".into()));
    }
    if audio.is_empty() {
        return Err(MetricError::Undefined("no audio beats".into()));
    }
    if !(sigma > 0.0) {
        return Err(MetricError::Undefined(format!("sigma must be positive, got {sigma}")));
    }
    let total: f64 = gesture
        .times
        .iter()
        .map(|g| {
            let d2 = audio.times.iter().map(|a| (g - a) * (g - a)).fold(f64::INFINITY, f64::min);
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(total / gesture.len() as f64)
}

/// Indices of strict local minima of `speed` that lie below
/// `(1 − threshold)` times the smaller of the maxima on either side, where
/// each side's maximum is taken up to the neighbouring minimum.
pub fn velocity_minima(speed: &[f64], threshold: f64) -> Vec<usize> {
    let n = speed.len();
    if n < 3 {
        return vec![];
    }
    let minima: Vec<usize> = (1..n - 1).filter(|&t| speed[t] < speed[t - 1] && speed[t] < speed[t + 1]).collect();
    let peak = |a: usize, b: usize| speed[a..=b].iter().copied().fold(f64::MIN, f64::max);
    minima
        .iter()
        .enumerate()
        .filter(|&(k, &t)| {
            let left = peak(if k == 0 { 0 } else { minima[k - 1] }, t);
            let right = peak(t, minima.get(k + 1).copied().unwrap_or(n - 1));
            speed[t] < (1.0 - threshold) * left.min(right)
        })
        .map(|(_, &t)| t)
        .collect()
}

/// Mean joint speed per frame (central differences, one-sided at the ends).
pub fn mean_joint_speed(positions: &[Vec<[f64; 3]>], joints: &[usize], fps: f64) -> Vec<f64> {
    let n = positions.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|t| {
            let (a, b) = (t.saturating_sub(1), (t + 1).min(n - 1));
            let dt = (b - a) as f64 / fps;
            joints
                .iter()
                .map(|&j| {
                    let (p, q) = (positions[a][j], positions[b][j]);
                    ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2)).sqrt() / dt
                })
                .sum::<f64>()
                / joints.len() as f64
        })
        .collect()
}

/// Beat times at velocity minima of the given joints, from root-relative
/// forward kinematics.
pub fn extract_motion_beats(clip: &MotionClip, skeleton: &Skeleton, joints: &[usize], threshold: f64) -> Result<BeatSet, MetricError> {
    if clip.len() < 3 {
        return Err(MetricError::Undefined(format!("beat extraction needs at least 3 frames, got {}", clip.len())));
    }
    let pos = skeleton.clip_positions(clip, false)?;
    let speed = mean_joint_speed(&pos, joints, clip.fps);
    BeatSet::new(velocity_minima(&speed, threshold).into_iter().map(|t| t as f64 / clip.fps).collect())
}

/// Strict local maxima of an onset curve at or above `min_strength`.
pub fn onset_beats(onset: &[f64], fps: f64, min_strength: f64) -> BeatSet {
    let n = onset.len();
    let times = (0..n)
        .filter(|&t| {
            let left = t == 0 || onset[t] > onset[t - 1];
            let right = t + 1 == n || onset[t] > onset[t + 1];
            left && right && onset[t] >= min_strength
        })
        .map(|t| t as f64 / fps)
        .collect();
    BeatSet { times }
}

/// `T × J × 3` position track.
pub type Track = Vec<Vec<[f64; 3]>>;

fn check_tracks(a: &Track, b: &Track) -> Result<(), MetricError> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(MetricError::Shape("tracks differ in frame or point count".into()));
    }
    Ok(())
}

fn l1(a: &Track, b: &Track) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(p, q)| (p[0] - q[0]).abs() + (p[1] - q[1]).abs() + (p[2] - q[2]).abs()).sum()
}

/// Sum of L1 distances over all ordered pairs, divided by `2N(N−1)`.
pub fn l1_diversity(tracks: &[Track]) -> Result<f64, MetricError> {
    let n = tracks.len();
    if n < 2 {
        return Err(MetricError::Undefined(format!("diversity needs at least 2 clips, got {n}")));
    }
    for t in &tracks[1..] {
        check_tracks(&tracks[0], t)?;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += l1(&tracks[i], &tracks[j]);
            }
        }
    }
    Ok(total / (2 * n * (n - 1)) as f64)
}

/// Diversity of joint positions with the global translation set to zero.
pub fn l1_diversity_clips(clips: &[MotionClip], skeleton: &Skeleton) -> Result<f64, MetricError> {
    let tracks = clips.iter().map(|c| skeleton.clip_positions(c, false)).collect::<Result<Vec<_>, _>>()?;
    l1_diversity(&tracks)
}

/// Mean squared coordinate error.
pub fn vertex_mse(gt: &Track, pred: &Track) -> Result<f64, MetricError> {
    check_tracks(gt, pred)?;
    let count = gt.iter().map(Vec::len).sum::<usize>() * 3;
    if count == 0 {
        return Err(MetricError::Undefined("empty track".into()));
    }
    let sse: f64 = gt.iter().flatten().zip(pred.iter().flatten()).map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>()).sum();
    Ok(sse / count as f64)
}

/// Mean L1 norm of the difference of per-frame vertex velocities.
pub fn lvd(gt: &Track, pred: &Track) -> Result<f64, MetricError> {
    check_tracks(gt, pred)?;
    if gt.len() < 2 {
        return Err(MetricError::Undefined("LVD needs at least 2 frames".into()));
    }
    let v = gt[0].len();
    let mut total = 0.0;
    for t in 0..gt.len() - 1 {
        for k in 0..v {
            for c in 0..3 {
                let dg = gt[t + 1][k][c] - gt[t][k][c];
                let dp = pred[t + 1][k][c] - pred[t][k][c];
                total += (dg - dp).abs();
            }
        }
    }
    Ok(total / ((gt.len() - 1) * v) as f64)
}

/// Mean per-vertex L1 norm of the position difference.
pub fn lvd_positional(gt: &Track, pred: &Track) -> Result<f64, MetricError> {
    check_tracks(gt, pred)?;
    let count = gt.iter().map(Vec::len).sum::<usize>();
    if count == 0 {
        return Err(MetricError::Undefined("empty track".into()));
    }
    Ok(l1(gt, pred) / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FootSlide {
    /// Mean horizontal displacement per frame while in contact, meters.
    pub mean: f64,
    pub contact_steps: usize,
    pub no_contact: bool,
}

/// Horizontal motion of the contact joints over steps `t → t+1` whose start
/// frame is in contact: contact label ≥ 0.5, or, with a height threshold,
/// joint height below it. `up_axis` selects the vertical coordinate.
pub fn foot_slide(clip: &MotionClip, skeleton: &Skeleton, up_axis: usize, height_threshold: Option<f64>) -> Result<FootSlide, MetricError> {
    if skeleton.len() != NUM_JOINTS {
        return Err(MetricError::Shape(format!("skeleton has {} joints", skeleton.len())));
    }
    let pos = skeleton.clip_positions(clip, true)?;
    let horizontal: Vec<usize> = (0..3).filter(|&c| c != up_axis).collect();
    let mut total = 0.0;
    let mut steps = 0usize;
    for t in 0..pos.len().saturating_sub(1) {
        for (slot, &j) in CONTACT_JOINTS.iter().enumerate() {
            let contact = match height_threshold {
                Some(h) => pos[t][j][up_axis] < h,
                None => clip.frames[t].contacts[slot] >= 0.5,
            };
            if contact {
                let d2: f64 = horizontal.iter().map(|&c| (pos[t + 1][j][c] - pos[t][j][c]).powi(2)).sum();
                total += d2.sqrt();
                steps += 1;
            }
        }
    }
    Ok(FootSlide { mean: if steps > 0 { total / steps as f64 } else { 0.0 }, contact_steps: steps, no_contact: steps == 0 })
}
