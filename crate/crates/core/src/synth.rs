//! Deterministic synthetic assets: the toy body model, its marker layout and
//! seeded motion, a 78-joint capture rig, face bases and the bundled
//! mini-dataset.

use crate::body_model::{BodyModel, MarkerLayout, ShapePose};
use crate::audio::{AudioTrack, EmbeddingTable, FusionWeights};
use crate::bvh::{write_bvh, BvhDocument, BvhJoint, Channel, JointMap};
use crate::dataset::{DatasetManifest, SequenceEntry};
use crate::face_map::{write_weight_csv, BlendshapeTemplates, ExpressionBasis, LinearFace, ARKIT_NAMES, EXPRESSION_PARAMS, NUM_BLENDSHAPES};
use crate::mosh::{MarkerSequence, PosePrior};
use rand::{Rng, SeedableRng};
use std::collections::HashSet;
use std::path::Path;
use rand_chacha::ChaCha8Rng;

pub const TOY_MARKER_OFFSET: f64 = 0.0095;
pub const TOY_JOINTS: [&str; 8] = ["pelvis", "spine", "head", "left_upper_arm", "left_forearm", "right_upper_arm", "left_leg", "right_leg"];
const TOY_PARENTS: [Option<usize>; 8] = [None, Some(0), Some(1), Some(1), Some(3), Some(1), Some(0), Some(0)];
const RING: usize = 6;

/// (start, end, radius) of the prism attached to each joint; a joint sits at
/// the center of its prism's start ring.
const SEGMENTS: [([f64; 3], [f64; 3], f64); 8] = [
    ([0.0, 0.95, 0.0], [0.0, 1.15, 0.0], 0.14),
    ([0.0, 1.15, 0.0], [0.0, 1.45, 0.0], 0.13),
    ([0.0, 1.50, 0.0], [0.0, 1.75, 0.0], 0.09),
    ([0.20, 1.42, 0.0], [0.47, 1.42, 0.0], 0.05),
    ([0.47, 1.42, 0.0], [0.72, 1.42, 0.0], 0.04),
    ([-0.20, 1.42, 0.0], [-0.47, 1.42, 0.0], 0.05),
    ([0.10, 0.95, 0.0], [0.10, 0.10, 0.0], 0.07),
    ([-0.10, 0.95, 0.0], [-0.10, 0.10, 0.0], 0.07),
];

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let l = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / l, v[1] / l, v[2] / l]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Eight hexagonal prisms (112 vertices) on a y-up, meter-scale skeleton with
/// four shape components: height, girth, arm length and leg length.
pub fn toy_body_model() -> BodyModel {
    let j = SEGMENTS.len();
    let b = 4;
    let mut verts: Vec<[f64; 3]> = Vec::new();
    let mut shape: Vec<[[f64; 4]; 3]> = Vec::new();
    let mut weights: Vec<Vec<f64>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let mut regressor = vec![0.0; j * SEGMENTS.len() * (2 * RING + 2)];
    let nv_total = SEGMENTS.len() * (2 * RING + 2);

    for (seg, &(start, end, radius)) in SEGMENTS.iter().enumerate() {
        let axis = normalize([end[0] - start[0], end[1] - start[1], end[2] - start[2]]);
        let helper = if axis[1].abs() > 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let u = normalize(cross(axis, helper));
        let v = cross(axis, u);
        let base = verts.len();
        for (ring, center) in [start, end].iter().enumerate() {
            for i in 0..RING {
                let a = std::f64::consts::TAU * i as f64 / RING as f64;
                let dir = [u[0] * a.cos() + v[0] * a.sin(), u[1] * a.cos() + v[1] * a.sin(), u[2] * a.cos() + v[2] * a.sin()];
                let p = [center[0] + radius * dir[0], center[1] + radius * dir[1], center[2] + radius * dir[2]];
                verts.push(p);
                shape.push(shape_row(seg, p, dir));
                let mut w = vec![0.0; j];
                match (ring, TOY_PARENTS[seg]) {
                    (0, Some(parent)) => {
                        w[seg] = 0.7;
                        w[parent] = 0.3;
                    }
                    _ => w[seg] = 1.0,
                }
                weights.push(w);
                if ring == 0 {
                    regressor[seg * nv_total + base + i] = 1.0 / RING as f64;
                }
            }
        }
        for center in [start, end] {
            verts.push(center);
            shape.push(shape_row(seg, center, [0.0; 3]));
            let mut w = vec![0.0; j];
            w[seg] = 1.0;
            weights.push(w);
        }
        let (cap0, cap1) = (base + 2 * RING, base + 2 * RING + 1);
        let mut add_face = |f: [usize; 3], verts: &Vec<[f64; 3]>, outward: [f64; 3]| {
            let (a, b, c) = (verts[f[0]], verts[f[1]], verts[f[2]]);
            let n = cross([b[0] - a[0], b[1] - a[1], b[2] - a[2]], [c[0] - a[0], c[1] - a[1], c[2] - a[2]]);
            if dot(n, outward) >= 0.0 {
                faces.push(f);
            } else {
                faces.push([f[0], f[2], f[1]]);
            }
        };
        for i in 0..RING {
            let n = (i + 1) % RING;
            let (s0, s1, e0, e1) = (base + i, base + n, base + RING + i, base + RING + n);
            let c = verts[s0];
            let out = [c[0] - start[0], c[1] - start[1], c[2] - start[2]];
            add_face([s0, s1, e1], &verts, out);
            add_face([s0, e1, e0], &verts, out);
            add_face([cap0, s1, s0], &verts, [-axis[0], -axis[1], -axis[2]]);
            add_face([cap1, e0, e1], &verts, axis);
        }
    }
    let flat_shape: Vec<f64> = shape.iter().flat_map(|rows| rows.iter().flat_map(|r| r[..b].to_vec())).collect();
    BodyModel::new(
        verts,
        flat_shape,
        b,
        regressor,
        TOY_PARENTS.to_vec(),
        weights.into_iter().flatten().collect(),
        faces,
        TOY_JOINTS.iter().map(|s| s.to_string()).collect(),
    )
    .expect("toy model is valid")
}

/// Shape displacement of one vertex: rows are x, y, z; columns the 4 components.
fn shape_row(seg: usize, p: [f64; 3], radial: [f64; 3]) -> [[f64; 4]; 3] {
    let mut rows = [[0.0; 4]; 3];
    // height: stretch y about the pelvis
    rows[1][0] = 0.05 * (p[1] - 1.0);
    // girth: push ring vertices outward
    for c in 0..3 {
        rows[c][1] = 0.02 * radial[c];
    }
    // arm length
    if (3..=5).contains(&seg) {
        rows[0][2] = 0.03 * p[0].signum() * (p[0].abs() - 0.2) / 0.5;
    }
    // leg length
    if seg >= 6 {
        rows[1][3] = -0.03 * (0.95 - p[1]) / 0.85;
    }
    rows
}

/// Three markers per segment: two on the start ring, one on the end ring.
pub fn toy_marker_layout(model: &BodyModel) -> MarkerLayout {
    let per_seg = 2 * RING + 2;
    let mut layout = MarkerLayout { names: vec![], marker_vertex: vec![], offsets: vec![] };
    for (seg, name) in model.joint_names.iter().enumerate() {
        let base = seg * per_seg;
        for (tag, v) in [("a", base + seg % RING), ("b", base + (seg + 3) % RING), ("c", base + RING + (seg + 1) % RING)] {
            layout.names.push(format!("{name}_{tag}"));
            layout.marker_vertex.push(v);
            layout.offsets.push(TOY_MARKER_OFFSET);
        }
    }
    layout
}

/// Weak zero-mean prior matched to the toy model's scale.
pub fn toy_prior(model: &BodyModel) -> PosePrior {
    PosePrior::isotropic(model.num_joints(), model.num_betas, 1e-3, 1e-3)
}

/// Ground-truth shape and smooth low-frequency motion for the toy model.
pub struct ToyMotion {
    pub beta: Vec<f64>,
    pub poses: Vec<ShapePose>,
}

pub fn toy_motion(model: &BodyModel, frames: usize, fps: f64, seed: u64) -> ToyMotion {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..model.num_betas).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let j = model.num_joints();
    let amp: Vec<[f64; 3]> = (0..j).map(|_| [rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4)]).collect();
    let freq: Vec<f64> = (0..j).map(|_| rng.gen_range(0.1..0.3)).collect();
    let phase: Vec<f64> = (0..j).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    let drift = [rng.gen_range(-0.2..0.2), 0.0, rng.gen_range(-0.2..0.2)];
    let poses = (0..frames)
        .map(|t| {
            let time = t as f64 / fps;
            let theta = (0..j)
                .map(|ji| {
                    let s = (std::f64::consts::TAU * freq[ji] * time + phase[ji]).sin();
                    let scale = if ji == 0 { 0.5 } else { 1.0 };
                    [amp[ji][0] * s * scale, amp[ji][1] * s * scale, amp[ji][2] * s * scale]
                })
                .collect();
            ShapePose { beta: beta.clone(), theta, gamma: [drift[0] * time, 0.0, drift[2] * time] }
        })
        .collect();
    ToyMotion { beta, poses }
}

/// Simulated observations of `motion`, with isotropic Gaussian noise of
/// standard deviation `noise` meters.
pub fn toy_markers(model: &BodyModel, layout: &MarkerLayout, motion: &ToyMotion, noise: f64, seed: u64) -> MarkerSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = motion
        .poses
        .iter()
        .map(|sp| {
            let mut m = model.simulate_markers(layout, sp).expect("toy layout is valid");
            if noise > 0.0 {
                for p in &mut m {
                    for c in p.iter_mut() {
                        *c += noise * gaussian(&mut rng);
                    }
                }
            }
            m
        })
        .collect();
    MarkerSequence::new(positions)
}

const FACE_GRID: usize = 12;

/// A 12×12 vertex face patch on a gentle dome, y up, meters.
pub fn face_neutral() -> Vec<[f64; 3]> {
    let mut v = Vec::with_capacity(FACE_GRID * FACE_GRID);
    for i in 0..FACE_GRID {
        for k in 0..FACE_GRID {
            let x = -0.08 + 0.16 * k as f64 / (FACE_GRID - 1) as f64;
            let y = -0.1 + 0.2 * i as f64 / (FACE_GRID - 1) as f64;
            v.push([x, y, 0.05 - 2.0 * (x * x + 0.5 * y * y)]);
        }
    }
    v
}

/// 100 smooth random expression modes followed by three jaw modes, the
/// small-angle rotations of the lower face about the jaw pivot.
pub fn synthetic_expression_basis(seed: u64) -> ExpressionBasis {
    let neutral = face_neutral();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut modes = Vec::with_capacity(EXPRESSION_PARAMS + 3);
    for _ in 0..EXPRESSION_PARAMS {
        let center = [rng.gen_range(-0.08..0.08), rng.gen_range(-0.1..0.1)];
        let width: f64 = rng.gen_range(0.02..0.06);
        let dir = [gaussian(&mut rng), gaussian(&mut rng), gaussian(&mut rng)];
        let mode = neutral
            .iter()
            .map(|p| {
                let r2 = (p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2);
                let w = 0.01 * (-r2 / (2.0 * width * width)).exp();
                [w * dir[0], w * dir[1], w * dir[2]]
            })
            .collect();
        modes.push(mode);
    }
    let pivot = [0.0, 0.02, -0.06];
    for axis in 0..3 {
        let mut e = [0.0; 3];
        e[axis] = 1.0;
        let mode = neutral
            .iter()
            .map(|p| {
                let weight = ((0.02 - p[1]) / 0.12).clamp(0.0, 1.0);
                let d = cross(e, [p[0] - pivot[0], p[1] - pivot[1], p[2] - pivot[2]]);
                [weight * d[0], weight * d[1], weight * d[2]]
            })
            .collect();
        modes.push(mode);
    }
    LinearFace::new(neutral, modes).expect("synthetic basis is valid")
}

/// Blendshape templates sharing the basis neutral: each delta is a sparse
/// combination of basis modes plus a small component outside their span.
pub fn synthetic_templates(basis: &ExpressionBasis, seed: u64) -> BlendshapeTemplates {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = basis.num_modes();
    let modes = (0..NUM_BLENDSHAPES)
        .map(|_| {
            let mut delta = vec![[0.0; 3]; basis.num_vertices()];
            for _ in 0..4 {
                let k = rng.gen_range(0..p);
                let c = rng.gen_range(-1.0..1.0);
                for (d, m) in delta.iter_mut().zip(&basis.modes[k]) {
                    for i in 0..3 {
                        d[i] += c * m[i];
                    }
                }
            }
            for d in &mut delta {
                for x in d.iter_mut() {
                    *x += 1e-4 * gaussian(&mut rng);
                }
            }
            delta
        })
        .collect();
    LinearFace::new(basis.neutral.clone(), modes).expect("synthetic templates are valid")
}

struct RigBuilder {
    joints: Vec<BvhJoint>,
}

impl RigBuilder {
    fn add(&mut self, name: &str, parent: usize, offset: [f64; 3]) -> usize {
        use Channel::*;
        self.joints.push(BvhJoint {
            name: name.to_string(),
            parent: Some(parent),
            offset,
            channels: vec![Zrotation, Xrotation, Yrotation],
            end_site: None,
        });
        self.joints.len() - 1
    }

    fn leaf(&mut self, name: &str, parent: usize, offset: [f64; 3], end: [f64; 3]) -> usize {
        let j = self.add(name, parent, offset);
        self.joints[j].end_site = Some(end);
        j
    }
}

/// A 78-joint motion-capture style rig (centimeters, y up) with twist joints,
/// four-segment fingers and face nubs. All joints carry three rotation
/// channels in ZXY order; the root also carries position.
pub fn reference_rig() -> Vec<BvhJoint> {
    use Channel::*;
    let mut b = RigBuilder {
        joints: vec![BvhJoint {
            name: "Hips".into(),
            parent: None,
            offset: [0.0; 3],
            channels: vec![Xposition, Yposition, Zposition, Zrotation, Xrotation, Yrotation],
            end_site: None,
        }],
    };
    let spine = b.add("Spine", 0, [0.0, 8.0, -1.0]);
    let spine1 = b.add("Spine1", spine, [0.0, 10.0, 0.0]);
    let spine2 = b.add("Spine2", spine1, [0.0, 10.0, 0.5]);
    let spine3 = b.add("Spine3", spine2, [0.0, 10.0, 0.5]);
    let neck = b.add("Neck", spine3, [0.0, 14.0, 1.0]);
    let neck1 = b.add("Neck1", neck, [0.0, 5.0, 0.5]);
    let head = b.add("Head", neck1, [0.0, 5.0, 1.0]);
    b.leaf("HeadEnd", head, [0.0, 18.0, 0.0], [0.0, 4.0, 0.0]);
    let jaw = b.add("Jaw", head, [0.0, -1.0, 2.0]);
    b.leaf("JawEnd", jaw, [0.0, -6.0, 8.0], [0.0, 0.0, 2.0]);
    b.leaf("LeftEye", head, [3.2, 7.0, 8.0], [0.0, 0.0, 1.5]);
    b.leaf("RightEye", head, [-3.2, 7.0, 8.0], [0.0, 0.0, 1.5]);
    b.leaf("Nose", head, [0.0, 4.0, 10.0], [0.0, 0.0, 2.0]);
    for (side, sx) in [("Left", 1.0), ("Right", -1.0)] {
        let shoulder = b.add(&format!("{side}Shoulder"), spine3, [sx * 3.0, 11.0, 0.0]);
        let arm = b.add(&format!("{side}Arm"), shoulder, [sx * 15.0, 0.0, 0.0]);
        b.leaf(&format!("{side}ArmTwist"), arm, [sx * 14.0, 0.0, 0.0], [sx * 2.0, 0.0, 0.0]);
        let fore = b.add(&format!("{side}ForeArm"), arm, [sx * 28.0, 0.0, 0.0]);
        b.leaf(&format!("{side}ForeArmTwist"), fore, [sx * 13.0, 0.0, 0.0], [sx * 2.0, 0.0, 0.0]);
        let hand = b.add(&format!("{side}Hand"), fore, [sx * 26.0, 0.0, 0.0]);
        let fingers = [("Thumb", 2.5, 3.0, 3.0), ("Index", 9.0, 1.8, 2.6), ("Middle", 9.0, 0.0, 2.9), ("Ring", 8.6, -1.8, 2.7), ("Pinky", 8.0, -3.5, 2.1)];
        for (finger, base, z, seg) in fingers {
            let mut parent = hand;
            for k in 1..=4 {
                let off = if k == 1 { [sx * base, 0.0, z] } else { [sx * seg, 0.0, 0.0] };
                let name = format!("{side}Hand{finger}{k}");
                parent = if k == 4 { b.leaf(&name, parent, off, [sx * 1.0, 0.0, 0.0]) } else { b.add(&name, parent, off) };
            }
        }
    }
    for (side, sx) in [("Left", 1.0), ("Right", -1.0)] {
        let up = b.add(&format!("{side}UpLeg"), 0, [sx * 9.0, -2.0, 0.0]);
        let leg = b.add(&format!("{side}Leg"), up, [0.0, -42.0, 0.0]);
        let foot = b.add(&format!("{side}Foot"), leg, [0.0, -41.0, -1.0]);
        let fore = b.add(&format!("{side}ForeFoot"), foot, [0.0, -5.0, 6.0]);
        let toe = b.add(&format!("{side}ToeBase"), fore, [0.0, -3.0, 6.0]);
        b.leaf(&format!("{side}ToeBaseEnd"), toe, [0.0, 0.0, 4.0], [0.0, 0.0, 2.0]);
    }
    b.joints
}

/// Seeded gesture-like motion on [`reference_rig`]: joints named in
/// [`JointMap::reference_rig`] sway with small sinusoids, the rest stay at
/// zero. Values are rounded to the six decimals the writer keeps.
pub fn reference_rig_motion(frames: usize, fps: f64, seed: u64) -> BvhDocument {
    let joints = reference_rig();
    let map = JointMap::reference_rig();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mapped: HashSet<&str> = map.entries.iter().map(|(_, s)| s.as_str()).collect();
    let channels: usize = joints.iter().map(|j| j.channels.len()).sum();
    // (channel, amplitude in degrees or cm, frequency Hz, phase)
    let mut waves = Vec::new();
    let mut c = 0;
    for (i, j) in joints.iter().enumerate() {
        let active = mapped.contains(j.name.as_str());
        for ch in &j.channels {
            if i == 0 && ch.position_axis().is_some() {
                let amp = if *ch == Channel::Yposition { 1.0 } else { 4.0 };
                waves.push((c, amp, rng.gen_range(0.1..0.3), rng.gen_range(0.0..std::f64::consts::TAU)));
            } else if active {
                let amp = if i == 0 { 3.0 } else { rng.gen_range(2.0..12.0) };
                waves.push((c, amp, rng.gen_range(0.3..1.5), rng.gen_range(0.0..std::f64::consts::TAU)));
            }
            c += 1;
        }
    }
    let base = [0.0, 95.0, 0.0];
    let frames = (0..frames)
        .map(|t| {
            let time = t as f64 / fps;
            let mut row = vec![0.0; channels];
            row[..3].copy_from_slice(&base);
            for &(c, amp, freq, phase) in &waves {
                row[c] += amp * (std::f64::consts::TAU * freq * time + phase).sin();
            }
            row.iter().map(|v| (v * 1e6).round() / 1e6).collect()
        })
        .collect();
    BvhDocument { joints, frame_time: 1.0 / fps, frames }
}

pub const MINI_SEQUENCES: usize = 3;
pub const MINI_FPS: f64 = 30.0;
pub const MINI_FRAMES: usize = 240;
pub const MINI_MARKER_FRAMES: usize = 45;
pub const MINI_SAMPLE_RATE: u32 = 16_000;

const MINI_CONFIG: &str = "\
# gesturekit run configuration: one `key = value` per line, `#` starts a comment.
# Relative paths are resolved against this file's directory.
dataset = dataset.json
seed = 7
stages = parse, fit, refine, facemap, quantize, features, metrics

bvh.unit_scale = 0.01
contacts.height = 0.11

fit.model = toy_model.json
fit.layout = toy_layout.csv
fit.stage1_frames = 12

refine.rules = head, fingers, ks3sigma
refine.head_top = 0.0, 0.22, 0.0

facemap.templates = face_templates.json
facemap.basis = face_basis.json

quantize.codebook_size = 256
quantize.segments = face, upper, hands, lower

features.embeddings = embeddings.json
features.fusion = fusion.json

metrics.bc_sigma = 0.1
metrics.beat_threshold = 0.1
metrics.onset_min = 0.3
";

fn round_to(v: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (v * s).round() / s
}

fn mini_arkit_rows(frames: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..NUM_BLENDSHAPES)
        .map(|_| {
            let active = rng.gen_bool(0.4);
            let amp = if active { rng.gen_range(0.1..0.5) } else { 0.0 };
            (rng.gen_range(0.0..0.2), amp, rng.gen_range(0.2..1.2), rng.gen_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    (0..frames)
        .map(|t| {
            let time = t as f64 / MINI_FPS;
            waves
                .iter()
                .map(|(base, amp, f, ph)| round_to((base + amp * (std::f64::consts::TAU * f * time + ph).sin()).clamp(0.0, 1.0), 4))
                .collect()
        })
        .collect()
}

/// Speech-like track: a low hum plus decaying noise bursts at irregular beats.
fn mini_audio(seconds: f64, seed: u64) -> AudioTrack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = MINI_SAMPLE_RATE as f64;
    let n = (seconds * sr) as usize;
    let mut samples: Vec<f64> = (0..n).map(|i| 0.03 * (std::f64::consts::TAU * 140.0 * i as f64 / sr).sin()).collect();
    let mut t = rng.gen_range(0.2..0.5);
    while t < seconds - 0.1 {
        let start = (t * sr) as usize;
        let amp = rng.gen_range(0.3..0.7);
        for k in 0..(0.06 * sr) as usize {
            if start + k < n {
                samples[start + k] += amp * (-(k as f64) / (0.012 * sr)).exp() * rng.gen_range(-1.0..1.0);
            }
        }
        t += rng.gen_range(0.45..0.8);
    }
    AudioTrack::new(samples, MINI_SAMPLE_RATE).expect("valid track")
}

fn mini_words(seconds: f64, rows: usize, seed: u64) -> String {
    const WORDS: [&str; 12] = ["so", "we", "went", "out", "and", "then", "it", "was", "really", "good", "you", "know"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from("word,start_s,end_s,embedding_row\n");
    let mut t = 0.1;
    while t < seconds - 0.4 {
        let len = round_to(rng.gen_range(0.15..0.4), 3);
        out.push_str(&format!("{},{:.3},{:.3},{}\n", WORDS[rng.gen_range(0..WORDS.len())], t, t + len, rng.gen_range(0..rows)));
        t = round_to(t + len + rng.gen_range(0.05..0.3), 3);
    }
    out
}

/// Writes the bundled mini-dataset: three 8 s sequences of the 78-joint
/// rig with markers, face weights, audio and transcripts, plus the shared
/// model assets and a run configuration.
pub fn write_mini_dataset(dir: &Path) -> Result<(), Box<dyn std::error::Error>> {
    std::fs::create_dir_all(dir)?;
    let model = toy_body_model();
    let layout = toy_marker_layout(&model);
    model.save(&dir.join("toy_model.json"))?;
    layout.write_csv(&dir.join("toy_layout.csv"))?;
    let basis = synthetic_expression_basis(11);
    synthetic_templates(&basis, 12).to_container("blendshape_templates").write(&dir.join("face_templates.json"))?;
    basis.to_container("expression_basis").write(&dir.join("face_basis.json"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let table = EmbeddingTable { rows: (0..16).map(|_| vec![round_to(rng.gen_range(-1.0..1.0), 4), round_to(rng.gen_range(-1.0..1.0), 4)]).collect() };
    table.to_container().write(&dir.join("embeddings.json"))?;
    let mut w = || round_to(rng.gen_range(-1.0..1.0), 4);
    let hidden = 4;
    let fusion = FusionWeights {
        w1: (0..hidden).map(|_| (0..4).map(|_| w()).collect()).collect(),
        b1: (0..hidden).map(|_| w()).collect(),
        w2: [(0..hidden).map(|_| w()).collect(), (0..hidden).map(|_| w()).collect()],
        b2: [w(), w()],
    };
    fusion.to_container().write(&dir.join("fusion.json"))?;

    let mut manifest = DatasetManifest::default();
    let seconds = MINI_FRAMES as f64 / MINI_FPS;
    let names: Vec<String> = ARKIT_NAMES.iter().map(|s| s.to_string()).collect();
    for i in 0..MINI_SEQUENCES {
        let id = format!("seq_{i}");
        let seed = 100 + i as u64;
        std::fs::write(dir.join(format!("{id}.bvh")), write_bvh(&reference_rig_motion(MINI_FRAMES, MINI_FPS, seed)))?;
        let motion = toy_motion(&model, MINI_MARKER_FRAMES, MINI_FPS, seed);
        toy_markers(&model, &layout, &motion, 0.001, seed).write_csv(&dir.join(format!("{id}_markers.csv")), &layout)?;
        write_weight_csv(&dir.join(format!("{id}_arkit.csv")), &names, &mini_arkit_rows(MINI_FRAMES, seed))?;
        mini_audio(seconds, seed).write_wav(&dir.join(format!("{id}.wav")))?;
        std::fs::write(dir.join(format!("{id}_words.csv")), mini_words(seconds, table.rows.len(), seed))?;
        manifest.sequences.push(SequenceEntry {
            speaker_id: "speaker_a".into(),
            sequence_id: id.clone(),
            duration_s: seconds,
            motion: format!("{id}.bvh").into(),
            audio: Some(format!("{id}.wav").into()),
            transcript: Some(format!("{id}_words.csv").into()),
            markers: Some(format!("{id}_markers.csv").into()),
            face_weights: Some(format!("{id}_arkit.csv").into()),
            split: None,
        });
    }
    std::fs::write(dir.join("dataset.json"), manifest.to_json())?;
    std::fs::write(dir.join("config.txt"), MINI_CONFIG)?;
    Ok(())
}

/// Standard normal sample (Box-Muller).
pub fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_model_shape() {
        let m = toy_body_model();
        assert_eq!(m.num_vertices(), 112);
        assert_eq!(m.num_joints(), 8);
        let n = m.vertex_normals(&ShapePose::rest(&m)).unwrap();
        assert!(n.isolated.is_empty());
        // Cap centers point along the segment axis.
        let head_top = 2 * 14 + 13;
        assert!((n.normals[head_top][1] - 1.0).abs() < 1e-12);
        // Joints sit at their start rings.
        let j = m.pose_joints(&[0.0; 4], &[[0.0; 3]; 8]);
        assert!((j.rest[6][1] - 0.95).abs() < 1e-12 && (j.rest[6][0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn layout_has_three_markers_per_segment() {
        let m = toy_body_model();
        let l = toy_marker_layout(&m);
        assert_eq!(l.len(), 24);
        assert!(l.validate(&m).is_ok());
    }

    #[test]
    fn reference_rig_maps_onto_model_joints() {
        let doc = reference_rig_motion(20, 30.0, 1);
        assert_eq!(doc.joints.len(), 78);
        doc.validate().unwrap();
        let map = JointMap::reference_rig();
        let idx = map.resolve(&doc).unwrap();
        let offsets = doc.channel_offsets();
        let spine3 = doc.joint_index("Spine3").unwrap();
        assert!(!idx.contains(&spine3));
        assert!(doc.frames.iter().all(|r| r[offsets[spine3]..offsets[spine3] + 3].iter().all(|v| *v == 0.0)));
        let skel = crate::bvh::skeleton_from_bvh(&doc, &map, 0.01).unwrap();
        assert_eq!(skel.len(), 55);
    }
}
