//! Compositional vector quantization over four body segments.
//!
//! Each segment gets its own codebook with a linear encoder and decoder
//! (a principal-subspace fit of the training frames) and k-means centroids
//! in the latent space. Encoding is per frame.

use crate::container::{Container, ContainerError};
use crate::motion::{
    MotionClip, MotionError, MotionFrame, CONTACT_DIMS, CONTACT_OFFSET, EXPRESSION_DIMS, EXPRESSION_OFFSET, JAW,
    LOWER_BODY_JOINTS, UPPER_BODY_JOINTS,
};
use crate::rotation::{geodesic_distance, matrix_from_rot6d, Rot6D, RotationError};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_CODEBOOK_SIZE: usize = 256;
pub const DEFAULT_LATENT_DIM: usize = 512;

#[derive(Debug, Error)]
pub enum VqError {
    #[error("empty codebook")]
    EmptyCodebook,
    #[error("index {index} out of range for codebook of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no training data")]
    NoData,
    #[error("unknown segment '{0}'")]
    UnknownSegment(String),
    #[error(transparent)]
    Rotation(#[from] RotationError),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("invalid codebook file: {0}")]
    Format(String),
}

/// Channels of one segment in the frame vector. `rotation_groups` are the
/// offsets, within the segment, of its 6D rotation blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub name: String,
    pub channels: Vec<usize>,
    pub rotation_groups: Vec<usize>,
}

fn joint_channels(joints: impl IntoIterator<Item = usize>) -> Vec<usize> {
    joints.into_iter().flat_map(|j| j * 6..j * 6 + 6).collect()
}

impl SegmentSpec {
    pub fn dims(&self) -> usize {
        self.channels.len()
    }

    /// Jaw rotation and 100 expression coefficients (106).
    pub fn face() -> Self {
        let mut channels = joint_channels([JAW]);
        channels.extend(EXPRESSION_OFFSET..EXPRESSION_OFFSET + EXPRESSION_DIMS);
        SegmentSpec { name: "face".into(), channels, rotation_groups: vec![0] }
    }

    /// Thirteen upper-body joints without fingers (78).
    pub fn upper() -> Self {
        SegmentSpec { name: "upper".into(), channels: joint_channels(UPPER_BODY_JOINTS), rotation_groups: (0..13).map(|i| i * 6).collect() }
    }

    /// Thirty finger joints (180).
    pub fn hands() -> Self {
        SegmentSpec { name: "hands".into(), channels: joint_channels(25..55), rotation_groups: (0..30).map(|i| i * 6).collect() }
    }

    /// Nine lower-body joints and the four contact labels (58).
    pub fn lower() -> Self {
        let mut channels = joint_channels(LOWER_BODY_JOINTS);
        channels.extend(CONTACT_OFFSET..CONTACT_OFFSET + CONTACT_DIMS);
        SegmentSpec { name: "lower".into(), channels, rotation_groups: (0..9).map(|i| i * 6).collect() }
    }

    pub fn all() -> Vec<SegmentSpec> {
        vec![Self::face(), Self::upper(), Self::hands(), Self::lower()]
    }

    pub fn by_name(name: &str) -> Result<Self, VqError> {
        match name {
            "face" => Ok(Self::face()),
            "upper" => Ok(Self::upper()),
            "hands" => Ok(Self::hands()),
            "lower" => Ok(Self::lower()),
            other => Err(VqError::UnknownSegment(other.to_string())),
        }
    }

    pub fn extract(&self, frame: &[f64]) -> Vec<f64> {
        self.channels.iter().map(|&c| frame[c]).collect()
    }

    pub fn insert(&self, frame: &mut [f64], values: &[f64]) {
        for (&c, &v) in self.channels.iter().zip(values) {
            frame[c] = v;
        }
    }

    /// Segment rows of every frame in `clip`.
    pub fn extract_clip(&self, clip: &MotionClip) -> Vec<Vec<f64>> {
        clip.frames.iter().map(|f| self.extract(&f.to_vector())).collect()
    }

    fn is_rotation_channel(&self) -> Vec<bool> {
        let mut r = vec![false; self.dims()];
        for &g in &self.rotation_groups {
            r[g..g + 6].iter_mut().for_each(|x| *x = true);
        }
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Projection {
    /// Principal subspace of the training frames.
    Pca,
    /// Latent equals the segment vector.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    pub codebook_size: usize,
    /// `None` uses the segment width; larger values zero-pad the latent.
    pub latent_dim: Option<usize>,
    pub projection: Projection,
    pub seed: u64,
    pub max_iters: usize,
    pub shift_tol: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig { codebook_size: DEFAULT_CODEBOOK_SIZE, latent_dim: None, projection: Projection::Pca, seed: 0, max_iters: 100, shift_tol: 1e-9 }
    }
}

/// Codebook with its linear encoder `z = E g + e` and decoder `ĝ = F q + f`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentCodebook {
    pub segment: SegmentSpec,
    pub seed: u64,
    /// `C × D`.
    pub entries: Vec<Vec<f64>>,
    /// `D × dims`.
    pub encoder: Vec<Vec<f64>>,
    pub encoder_bias: Vec<f64>,
    /// `dims × D`.
    pub decoder: Vec<Vec<f64>>,
    pub decoder_bias: Vec<f64>,
}

fn mat_vec(m: &[Vec<f64>], v: &[f64], bias: &[f64]) -> Vec<f64> {
    m.iter().zip(bias).map(|(row, b)| row.iter().zip(v).map(|(a, x)| a * x).sum::<f64>() + b).collect()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest entry; ties go to the lowest index.
pub fn nearest(entries: &[Vec<f64>], z: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in entries.iter().enumerate() {
        let d = squared_distance(e, z);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best
}

impl SegmentCodebook {
    pub fn size(&self) -> usize {
        self.entries.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.len()
    }

    pub fn project(&self, g: &[f64]) -> Result<Vec<f64>, VqError> {
        if g.len() != self.segment.dims() {
            return Err(VqError::Dimension(format!("segment '{}' expects {} values, got {}", self.segment.name, self.segment.dims(), g.len())));
        }
        Ok(mat_vec(&self.encoder, g, &self.encoder_bias))
    }

    pub fn encode_frame(&self, g: &[f64]) -> Result<(usize, Vec<f64>), VqError> {
        let z = self.project(g)?;
        let (i, _) = nearest(&self.entries, &z).ok_or(VqError::EmptyCodebook)?;
        Ok((i, z))
    }

    pub fn encode(&self, rows: &[Vec<f64>]) -> Result<Vec<usize>, VqError> {
        rows.iter().map(|g| self.encode_frame(g).map(|(i, _)| i)).collect()
    }

    pub fn decode_index(&self, index: usize) -> Result<Vec<f64>, VqError> {
        let q = self.entries.get(index).ok_or(VqError::IndexOutOfRange { index, size: self.size() })?;
        Ok(mat_vec(&self.decoder, q, &self.decoder_bias))
    }

    pub fn decode_indices(&self, indices: &[usize]) -> Result<Vec<Vec<f64>>, VqError> {
        indices.iter().map(|&i| self.decode_index(i)).collect()
    }

    /// Mean squared error of `decode(encode(g))` per channel.
    pub fn reconstruction_mse(&self, rows: &[Vec<f64>]) -> Result<f64, VqError> {
        if rows.is_empty() {
            return Err(VqError::NoData);
        }
        let mut total = 0.0;
        for g in rows {
            let (i, _) = self.encode_frame(g)?;
            total += squared_distance(&self.decode_index(i)?, g);
        }
        Ok(total / (rows.len() * self.segment.dims()) as f64)
    }

    pub fn to_container(&self) -> Container {
        let c_size = self.size();
        let d = self.latent_dim();
        let dims = self.segment.dims();
        let mut c = Container::new("vq_codebook").with_meta(json!({
            "C": c_size,
            "D": d,
            "dims": dims,
            "segment": self.segment,
            "seed": self.seed,
        }));
        c.push("entries", &[c_size, d], self.entries.concat()).expect("shape");
        c.push("encoder", &[d, dims], self.encoder.concat()).expect("shape");
        c.push("encoder_bias", &[d], self.encoder_bias.clone()).expect("shape");
        c.push("decoder", &[dims, d], self.decoder.concat()).expect("shape");
        c.push("decoder_bias", &[dims], self.decoder_bias.clone()).expect("shape");
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, VqError> {
        c.expect_kind("vq_codebook")?;
        let segment: SegmentSpec = serde_json::from_value(c.meta["segment"].clone()).map_err(|e| VqError::Format(e.to_string()))?;
        let seed = c.meta["seed"].as_u64().ok_or_else(|| VqError::Format("missing seed".into()))?;
        let dims = segment.dims();
        let (es, entries) = c.array_shaped("entries", &[None, None])?;
        let d = es[1];
        let (_, enc) = c.array_shaped("encoder", &[Some(d), Some(dims)])?;
        let (_, eb) = c.array_shaped("encoder_bias", &[Some(d)])?;
        let (_, dec) = c.array_shaped("decoder", &[Some(dims), Some(d)])?;
        let (_, db) = c.array_shaped("decoder_bias", &[Some(dims)])?;
        let rows = |data: &[f64], w: usize| data.chunks(w.max(1)).map(<[f64]>::to_vec).collect::<Vec<_>>();
        Ok(SegmentCodebook {
            segment,
            seed,
            entries: if d == 0 { vec![vec![]; es[0]] } else { rows(entries, d) },
            encoder: rows(enc, dims),
            encoder_bias: eb.to_vec(),
            decoder: if d == 0 { vec![vec![]; dims] } else { rows(dec, d) },
            decoder_bias: db.to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), VqError> {
        Ok(self.to_container().write(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, VqError> {
        Self::from_container(&Container::read(path)?)
    }
}

type Linear = (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>, Vec<f64>);

/// Encoder and decoder for `training`, with latent width `d`.
fn fit_projection(training: &[Vec<f64>], dims: usize, d: usize, projection: Projection) -> Linear {
    let used = d.min(dims);
    match projection {
        Projection::Identity => {
            let enc = (0..d).map(|i| (0..dims).map(|c| if i == c && i < used { 1.0 } else { 0.0 }).collect()).collect();
            let dec = (0..dims).map(|c| (0..d).map(|i| if i == c && i < used { 1.0 } else { 0.0 }).collect()).collect();
            (enc, vec![0.0; d], dec, vec![0.0; dims])
        }
        Projection::Pca => {
            let n = training.len() as f64;
            let mean: Vec<f64> = (0..dims).map(|c| training.iter().map(|r| r[c]).sum::<f64>() / n).collect();
            let mut cov = DMatrix::zeros(dims, dims);
            for r in training {
                let centered = nalgebra::DVector::from_iterator(dims, r.iter().zip(&mean).map(|(a, m)| a - m));
                cov.ger(1.0 / n, &centered, &centered, 1.0);
            }
            let eig = cov.symmetric_eigen();
            let mut order: Vec<usize> = (0..dims).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
            let mut basis: Vec<Vec<f64>> = order[..used]
                .iter()
                .map(|&k| {
                    let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
                    // deterministic sign: largest-magnitude component positive
                    let lead = v.iter().enumerate().fold(0, |bi, (i, x)| if x.abs() > v[bi].abs() { i } else { bi });
                    if v[lead] < 0.0 {
                        v.iter_mut().for_each(|x| *x = -*x);
                    }
                    v
                })
                .collect();
            basis.resize(d, vec![0.0; dims]);
            let enc_bias: Vec<f64> = basis.iter().map(|u| -u.iter().zip(&mean).map(|(a, m)| a * m).sum::<f64>()).collect();
            let dec: Vec<Vec<f64>> = (0..dims).map(|c| basis.iter().map(|u| u[c]).collect()).collect();
            (basis, enc_bias, dec, mean)
        }
    }
}

fn distinct_count(points: &[Vec<f64>]) -> usize {
    let mut sorted: Vec<&Vec<f64>> = points.iter().collect();
    sorted.sort_by(|a, b| a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    sorted.dedup_by(|a, b| a == b);
    sorted.len()
}

/// Adds k-means++ seeds to `centroids` until it holds `k` entries.
fn kmeans_pp_extend(points: &[Vec<f64>], centroids: &mut Vec<Vec<f64>>, k: usize, rng: &mut ChaCha8Rng) {
    if centroids.is_empty() && k > 0 {
        centroids.push(points[rng.gen_range(0..points.len())].clone());
    }
    let mut d2: Vec<f64> = points.iter().map(|p| nearest(centroids, p).map_or(f64::INFINITY, |(_, d)| d)).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    chosen = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            chosen.expect("positive mass")
        } else {
            // every point already coincides with a centroid
            break;
        };
        let c = points[pick].clone();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
}

fn assignment_sse(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut sse = 0.0;
    let assign = points
        .iter()
        .map(|p| {
            let (i, d) = nearest(centroids, p).expect("non-empty");
            sse += d;
            i
        })
        .collect();
    (assign, sse)
}

/// Lloyd iterations; returns the centroid set with the lowest SSE seen.
/// Empty clusters keep their previous centroid.
fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iters: usize, tol: f64) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let (mut assign, mut sse) = assignment_sse(points, &centroids);
    let mut best = (sse, centroids.clone());
    for _ in 0..max_iters {
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        // offsets from the current centroid, so a cluster of identical points stays exact
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for ((s, x), c) in sums[a].iter_mut().zip(p).zip(&centroids[a]) {
                *s += x - c;
            }
        }
        let mut shift: f64 = 0.0;
        for (k, c) in centroids.iter_mut().enumerate() {
            if counts[k] == 0 {
                continue;
            }
            let new: Vec<f64> = sums[k].iter().zip(c.iter()).map(|(s, m)| m + s / counts[k] as f64).collect();
            shift = shift.max(squared_distance(&new, c).sqrt());
            *c = new;
        }
        (assign, sse) = assignment_sse(points, &centroids);
        if sse < best.0 {
            best = (sse, centroids.clone());
        }
        if shift < tol {
            break;
        }
    }
    best.1
}

/// Learns a codebook for one segment. `warm_start` centroids (in this
/// projection's latent space) seed k-means before k-means++ fills the rest.
pub fn learn_codebook_warm(
    training: &[Vec<f64>],
    segment: &SegmentSpec,
    config: &LearnConfig,
    warm_start: Option<&SegmentCodebook>,
) -> Result<SegmentCodebook, VqError> {
    if training.is_empty() {
        return Err(VqError::NoData);
    }
    let dims = segment.dims();
    if let Some(r) = training.iter().position(|r| r.len() != dims) {
        return Err(VqError::Dimension(format!("training row {r} has {} values, segment '{}' has {dims}", training[r].len(), segment.name)));
    }
    if config.codebook_size == 0 {
        return Err(VqError::EmptyCodebook);
    }
    let d = config.latent_dim.unwrap_or(dims);
    let (encoder, encoder_bias, decoder, decoder_bias) = match warm_start {
        Some(w) => (w.encoder.clone(), w.encoder_bias.clone(), w.decoder.clone(), w.decoder_bias.clone()),
        None => fit_projection(training, dims, d, config.projection),
    };
    let latents: Vec<Vec<f64>> = training.iter().map(|g| mat_vec(&encoder, g, &encoder_bias)).collect();
    let mut k = config.codebook_size;
    if training.len() < k {
        log::warn!("segment '{}': {} training frames < codebook size {k}; reducing", segment.name, training.len());
        k = training.len();
    }
    let distinct = distinct_count(&latents);
    if distinct < k {
        log::warn!("segment '{}': only {distinct} distinct latents; reducing codebook size from {k}", segment.name);
        k = distinct;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids: Vec<Vec<f64>> = warm_start.map(|w| w.entries.iter().take(k).cloned().collect()).unwrap_or_default();
    kmeans_pp_extend(&latents, &mut centroids, k, &mut rng);
    let entries = lloyd(&latents, centroids, config.max_iters, config.shift_tol);
    for a in 0..entries.len() {
        for b in a + 1..entries.len() {
            if squared_distance(&entries[a], &entries[b]).sqrt() <= 1e-12 {
                log::warn!("segment '{}': entries {a} and {b} coincide", segment.name);
            }
        }
    }
    Ok(SegmentCodebook { segment: segment.clone(), seed: config.seed, entries, encoder, encoder_bias, decoder, decoder_bias })
}

pub fn learn_codebook(training: &[Vec<f64>], segment: &SegmentSpec, config: &LearnConfig) -> Result<SegmentCodebook, VqError> {
    learn_codebook_warm(training, segment, config, None)
}

/// Codebooks of increasing size, each warm-started from the previous one.
pub fn learn_nested(training: &[Vec<f64>], segment: &SegmentSpec, sizes: &[usize], config: &LearnConfig) -> Result<Vec<SegmentCodebook>, VqError> {
    let mut out: Vec<SegmentCodebook> = Vec::with_capacity(sizes.len());
    for &c in sizes {
        let cfg = LearnConfig { codebook_size: c, ..config.clone() };
        let cb = learn_codebook_warm(training, segment, &cfg, out.last())?;
        out.push(cb);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub vel: f64,
    pub acc: f64,
    pub codebook: f64,
    pub commitment: f64,
    /// False when there are fewer than three frames and `acc` is reported as 0.
    pub acc_defined: bool,
}

impl LossBreakdown {
    /// Sum with unit weights.
    pub fn total(&self) -> f64 {
        self.rec + self.vel + self.acc + self.codebook + self.commitment
    }
}

fn mean_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>], order: usize) -> f64 {
    let diff = |x: &[Vec<f64>], t: usize, c: usize| match order {
        1 => x[t + 1][c] - x[t][c],
        _ => x[t + 2][c] - 2.0 * x[t + 1][c] + x[t][c],
    };
    let steps = a.len() - order;
    let dims = a[0].len();
    let mut total = 0.0;
    for t in 0..steps {
        for c in 0..dims {
            total += (diff(a, t, c) - diff(b, t, c)).abs();
        }
    }
    total / (steps * dims) as f64
}

/// Reconstruction, velocity, acceleration, codebook and commitment terms.
pub fn vq_losses(segment: &SegmentSpec, g: &[Vec<f64>], g_hat: &[Vec<f64>], z: &[Vec<f64>], q: &[Vec<f64>]) -> Result<LossBreakdown, VqError> {
    let t = g.len();
    if t == 0 {
        return Err(VqError::NoData);
    }
    if g_hat.len() != t || z.len() != t || q.len() != t {
        return Err(VqError::Dimension(format!("sequence lengths differ: g {t}, ĝ {}, z {}, q {}", g_hat.len(), z.len(), q.len())));
    }
    let dims = segment.dims();
    if g.iter().chain(g_hat).any(|r| r.len() != dims) {
        return Err(VqError::Dimension(format!("segment rows must have {dims} values")));
    }
    if z.iter().zip(q).any(|(a, b)| a.len() != b.len()) {
        return Err(VqError::Dimension("latent and quantized widths differ".into()));
    }
    let rot = segment.is_rotation_channel();
    let plain: Vec<usize> = (0..dims).filter(|&c| !rot[c]).collect();
    let mut rec = 0.0;
    if !segment.rotation_groups.is_empty() {
        let mut total = 0.0;
        for (a, b) in g.iter().zip(g_hat) {
            for &o in &segment.rotation_groups {
                let ra = matrix_from_rot6d(&Rot6D::from_slice(&a[o..o + 6])?)?;
                let rb = matrix_from_rot6d(&Rot6D::from_slice(&b[o..o + 6])?)?;
                total += geodesic_distance(&ra, &rb);
            }
        }
        rec += total / (t * segment.rotation_groups.len()) as f64;
    }
    if !plain.is_empty() {
        let total: f64 = g.iter().zip(g_hat).map(|(a, b)| plain.iter().map(|&c| (a[c] - b[c]).abs()).sum::<f64>()).sum();
        rec += total / (t * plain.len()) as f64;
    }
    let vel = if t >= 2 { mean_abs_diff(g, g_hat, 1) } else { 0.0 };
    let acc_defined = t >= 3;
    let acc = if acc_defined { mean_abs_diff(g, g_hat, 2) } else { 0.0 };
    let codebook = z.iter().zip(q).map(|(a, b)| squared_distance(a, b)).sum::<f64>() / t as f64;
    Ok(LossBreakdown { rec, vel, acc, codebook, commitment: codebook, acc_defined })
}

/// Encodes `rows` and evaluates the losses of the reconstruction.
pub fn evaluate(cb: &SegmentCodebook, rows: &[Vec<f64>]) -> Result<LossBreakdown, VqError> {
    let mut z = Vec::with_capacity(rows.len());
    let mut q = Vec::with_capacity(rows.len());
    let mut g_hat = Vec::with_capacity(rows.len());
    for g in rows {
        let (i, zi) = cb.encode_frame(g)?;
        z.push(zi);
        q.push(cb.entries[i].clone());
        g_hat.push(cb.decode_index(i)?);
    }
    vq_losses(&cb.segment, rows, &g_hat, &z, &q)
}

/// One codebook per segment.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeQuantizer {
    pub codebooks: Vec<SegmentCodebook>,
}

/// Per-segment code indices for a clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCodes {
    pub segment: String,
    pub indices: Vec<usize>,
}

impl CompositeQuantizer {
    pub fn learn(clips: &[MotionClip], segments: &[SegmentSpec], config: &LearnConfig) -> Result<Self, VqError> {
        let codebooks = segments
            .iter()
            .map(|s| {
                let rows: Vec<Vec<f64>> = clips.iter().flat_map(|c| s.extract_clip(c)).collect();
                learn_codebook(&rows, s, config)
            })
            .collect::<Result<_, _>>()?;
        Ok(CompositeQuantizer { codebooks })
    }

    pub fn encode(&self, clip: &MotionClip) -> Result<Vec<SegmentCodes>, VqError> {
        self.codebooks.iter().map(|cb| Ok(SegmentCodes { segment: cb.segment.name.clone(), indices: cb.encode(&cb.segment.extract_clip(clip))? })).collect()
    }

    /// Decoded clip; channels outside every segment are copied from `base`.
    pub fn decode(&self, codes: &[SegmentCodes], base: &MotionClip) -> Result<MotionClip, VqError> {
        let mut rows = base.to_rows();
        for c in codes {
            let cb = self
                .codebooks
                .iter()
                .find(|cb| cb.segment.name == c.segment)
                .ok_or_else(|| VqError::UnknownSegment(c.segment.clone()))?;
            if c.indices.len() != rows.len() {
                return Err(VqError::Dimension(format!("{} codes for {} frames", c.indices.len(), rows.len())));
            }
            for (row, &i) in rows.iter_mut().zip(&c.indices) {
                cb.segment.insert(row, &cb.decode_index(i)?);
            }
        }
        Ok(MotionClip { fps: base.fps, frames: rows.iter().map(|r| MotionFrame::from_vector(r)).collect::<Result<_, _>>()? })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::FRAME_DIMS;

    fn toy_book(entries: Vec<Vec<f64>>) -> SegmentCodebook {
        let d = entries[0].len();
        let seg = SegmentSpec { name: "toy".into(), channels: (0..d).collect(), rotation_groups: vec![] };
        let (encoder, encoder_bias, decoder, decoder_bias) = fit_projection(&entries, d, d, Projection::Identity);
        SegmentCodebook { segment: seg, seed: 0, entries, encoder, encoder_bias, decoder, decoder_bias }
    }

    #[test]
    fn nearest_hand_cases() {
        let cb = toy_book(vec![vec![0.0, 0.0], vec![1.0, 1.0]]);
        assert_eq!(cb.encode_frame(&[0.9, 0.8]).unwrap().0, 1);
        assert_eq!(cb.encode_frame(&[0.0, 0.0]).unwrap().0, 0);
        assert_eq!(cb.encode_frame(&[0.5, 0.5]).unwrap().0, 0);
        assert!(matches!(cb.decode_index(2), Err(VqError::IndexOutOfRange { index: 2, size: 2 })));
    }

    #[test]
    fn segment_widths() {
        let dims: Vec<usize> = SegmentSpec::all().iter().map(SegmentSpec::dims).collect();
        assert_eq!(dims, vec![106, 78, 180, 58]);
        let mut seen = vec![false; FRAME_DIMS];
        for s in SegmentSpec::all() {
            for c in s.channels {
                assert!(!seen[c]);
                seen[c] = true;
            }
        }
    }

    #[test]
    fn single_entry_is_mean() {
        let data = vec![vec![0.0, 2.0], vec![2.0, 4.0], vec![4.0, 0.0]];
        let seg = SegmentSpec { name: "toy".into(), channels: vec![0, 1], rotation_groups: vec![] };
        let cfg = LearnConfig { codebook_size: 1, projection: Projection::Identity, ..Default::default() };
        let cb = learn_codebook(&data, &seg, &cfg).unwrap();
        assert_eq!(cb.entries, vec![vec![2.0, 2.0]]);
        let out = cb.decode_indices(&[0, 0]).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn codebook_size_reduced_to_distinct() {
        let data = vec![vec![1.0], vec![1.0], vec![3.0]];
        let seg = SegmentSpec { name: "toy".into(), channels: vec![0], rotation_groups: vec![] };
        let cfg = LearnConfig { codebook_size: 8, projection: Projection::Identity, ..Default::default() };
        let cb = learn_codebook(&data, &seg, &cfg).unwrap();
        assert_eq!(cb.size(), 2);
    }

    #[test]
    fn difference_losses_vanish_for_offsets() {
        let seg = SegmentSpec { name: "toy".into(), channels: vec![0, 1], rotation_groups: vec![] };
        let g = vec![vec![1.0, 2.0]; 4];
        let h = vec![vec![1.5, 2.5]; 4];
        let z = vec![vec![0.0]; 4];
        let l = vq_losses(&seg, &g, &h, &z, &z).unwrap();
        assert_eq!((l.vel, l.acc, l.codebook), (0.0, 0.0, 0.0));
        assert_eq!(l.rec, 0.5);
        let short = vq_losses(&seg, &g[..2], &h[..2], &z[..2], &z[..2]).unwrap();
        assert!(!short.acc_defined);
    }
}
