//! Holistic motion clips and the 55-joint kinematic skeleton.
//!
//! A frame is the concatenation of 55 joint rotations in 6D form, 100
//! expression coefficients, 4 foot-contact labels and a 3D global
//! translation: `55 * 6 + 100 + 4 + 3 = 437` values.

use crate::container::{Container, ContainerError};
use crate::rotation::{matrix_from_rot6d, RotationError, RotationMatrix, Rot6D};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::path::Path;
use thiserror::Error;

pub const NUM_JOINTS: usize = 55;
pub const EXPRESSION_DIMS: usize = 100;
pub const CONTACT_DIMS: usize = 4;
pub const ROTATION_DIMS: usize = NUM_JOINTS * 6;
pub const EXPRESSION_OFFSET: usize = ROTATION_DIMS;
pub const CONTACT_OFFSET: usize = EXPRESSION_OFFSET + EXPRESSION_DIMS;
pub const TRANSLATION_OFFSET: usize = CONTACT_OFFSET + CONTACT_DIMS;
pub const FRAME_DIMS: usize = TRANSLATION_OFFSET + 3;

/// SMPL-X joint names in model order.
pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2", "left_ankle",
    "right_ankle", "spine3", "left_foot", "right_foot", "neck", "left_collar", "right_collar", "head",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist", "jaw",
    "left_eye", "right_eye", "left_index1", "left_index2", "left_index3", "left_middle1", "left_middle2",
    "left_middle3", "left_pinky1", "left_pinky2", "left_pinky3", "left_ring1", "left_ring2", "left_ring3",
    "left_thumb1", "left_thumb2", "left_thumb3", "right_index1", "right_index2", "right_index3",
    "right_middle1", "right_middle2", "right_middle3", "right_pinky1", "right_pinky2", "right_pinky3",
    "right_ring1", "right_ring2", "right_ring3", "right_thumb1", "right_thumb2", "right_thumb3",
];

/// Parent of each joint; `-1` marks the root.
pub const JOINT_PARENTS: [i32; NUM_JOINTS] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 15, 15, 15, 20, 25, 26, 20, 28, 29,
    20, 31, 32, 20, 34, 35, 20, 37, 38, 21, 40, 41, 21, 43, 44, 21, 46, 47, 21, 49, 50, 21, 52, 53,
];

pub const JAW: usize = 22;
pub const LEFT_HAND_JOINTS: std::ops::Range<usize> = 25..40;
pub const RIGHT_HAND_JOINTS: std::ops::Range<usize> = 40..55;
pub const THUMB_JOINTS: [usize; 6] = [37, 38, 39, 52, 53, 54];
/// Joints whose contact labels are stored: left ankle, left toe, right ankle, right toe.
pub const CONTACT_JOINTS: [usize; CONTACT_DIMS] = [7, 10, 8, 11];
/// Upper-body joints without fingers, used for motion beats.
pub const UPPER_BODY_JOINTS: [usize; 13] = [3, 6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21];
pub const LOWER_BODY_JOINTS: [usize; 9] = [0, 1, 2, 4, 5, 7, 8, 10, 11];

pub fn joint_index(name: &str) -> Option<usize> {
    JOINT_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Error)]
pub enum MotionError {
    #[error("frame has {found} values, expected {expected}")]
    FrameWidth { expected: usize, found: usize },
    #[error("invalid skeleton: {0}")]
    Skeleton(String),
    #[error("clip shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Rotation(#[from] RotationError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("skeleton file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionFrame {
    pub rotations: Vec<Rot6D>,
    pub expression: Vec<f64>,
    pub contacts: [f64; CONTACT_DIMS],
    pub translation: [f64; 3],
}

impl MotionFrame {
    pub fn rest() -> Self {
        MotionFrame {
            rotations: vec![Rot6D::IDENTITY; NUM_JOINTS],
            expression: vec![0.0; EXPRESSION_DIMS],
            contacts: [0.0; CONTACT_DIMS],
            translation: [0.0; 3],
        }
    }

    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(FRAME_DIMS);
        for r in &self.rotations {
            v.extend_from_slice(&r.0);
        }
        v.extend_from_slice(&self.expression);
        v.extend_from_slice(&self.contacts);
        v.extend_from_slice(&self.translation);
        v
    }

    pub fn from_vector(v: &[f64]) -> Result<Self, MotionError> {
        if v.len() != FRAME_DIMS {
            return Err(MotionError::FrameWidth { expected: FRAME_DIMS, found: v.len() });
        }
        let rotations = v[..ROTATION_DIMS].chunks_exact(6).map(|c| Rot6D::from_slice(c)).collect::<Result<_, _>>()?;
        Ok(MotionFrame {
            rotations,
            expression: v[EXPRESSION_OFFSET..CONTACT_OFFSET].to_vec(),
            contacts: v[CONTACT_OFFSET..TRANSLATION_OFFSET].try_into().expect("contact width"),
            translation: v[TRANSLATION_OFFSET..].try_into().expect("translation width"),
        })
    }

    pub fn rotation_matrices(&self) -> Result<Vec<RotationMatrix>, MotionError> {
        self.rotations.iter().map(|r| matrix_from_rot6d(r).map_err(MotionError::from)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub fps: f64,
    pub frames: Vec<MotionFrame>,
}

impl MotionClip {
    pub fn rest(num_frames: usize, fps: f64) -> Self {
        MotionClip { fps, frames: vec![MotionFrame::rest(); num_frames] }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `T × 437` row-major matrix.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.frames.iter().map(MotionFrame::to_vector).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>], fps: f64) -> Result<Self, MotionError> {
        let frames = rows.iter().map(|r| MotionFrame::from_vector(r)).collect::<Result<_, _>>()?;
        Ok(MotionClip { fps, frames })
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("motion_clip").with_meta(json!({ "fps": self.fps, "frame_dims": FRAME_DIMS }));
        let data: Vec<f64> = self.frames.iter().flat_map(MotionFrame::to_vector).collect();
        c.push("frames", &[self.frames.len(), FRAME_DIMS], data).expect("consistent shape");
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, MotionError> {
        c.expect_kind("motion_clip")?;
        let fps = c.meta.get("fps").and_then(|v| v.as_f64()).ok_or_else(|| MotionError::Shape("missing fps".into()))?;
        let (shape, data) = c.array_shaped("frames", &[None, Some(FRAME_DIMS)])?;
        let frames = data.chunks_exact(FRAME_DIMS).map(MotionFrame::from_vector).collect::<Result<Vec<_>, _>>()?;
        debug_assert_eq!(frames.len(), shape[0]);
        Ok(MotionClip { fps, frames })
    }
}

/// Kinematic tree with rest offsets; parents precede children.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub names: Vec<String>,
    pub parents: Vec<Option<usize>>,
    pub offsets: Vec<[f64; 3]>,
}

impl Skeleton {
    pub fn new(names: Vec<String>, parents: Vec<Option<usize>>, offsets: Vec<[f64; 3]>) -> Result<Self, MotionError> {
        if names.len() != parents.len() || names.len() != offsets.len() {
            return Err(MotionError::Skeleton("names, parents and offsets differ in length".into()));
        }
        let mut roots = 0;
        for (i, p) in parents.iter().enumerate() {
            match p {
                None => roots += 1,
                Some(p) if *p >= i => {
                    return Err(MotionError::Skeleton(format!("joint {i} has parent {p} that does not precede it")))
                }
                _ => {}
            }
        }
        if roots != 1 {
            return Err(MotionError::Skeleton(format!("expected a single root, found {roots}")));
        }
        Ok(Skeleton { names, parents, offsets })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Global joint positions for local rotations and a root translation.
    pub fn forward_kinematics(&self, local: &[RotationMatrix], root: [f64; 3]) -> Vec<[f64; 3]> {
        let n = self.len();
        let mut global: Vec<RotationMatrix> = Vec::with_capacity(n);
        let mut pos: Vec<[f64; 3]> = Vec::with_capacity(n);
        for j in 0..n {
            match self.parents[j] {
                None => {
                    global.push(local[j]);
                    let o = self.offsets[j];
                    pos.push([o[0] + root[0], o[1] + root[1], o[2] + root[2]]);
                }
                Some(p) => {
                    let off = global[p].rotate(self.offsets[j]);
                    let pp = pos[p];
                    pos.push([pp[0] + off[0], pp[1] + off[1], pp[2] + off[2]]);
                    global.push(global[p].mul(&local[j]));
                }
            }
        }
        pos
    }

    pub fn write_json(&self, path: &Path) -> Result<(), MotionError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| MotionError::Io(e.to_string()))? + "\n";
        std::fs::write(path, text).map_err(|e| MotionError::Io(e.to_string()))
    }

    pub fn read_json(path: &Path) -> Result<Self, MotionError> {
        let text = std::fs::read_to_string(path).map_err(|e| MotionError::Io(format!("{}: {e}", path.display())))?;
        let s: Skeleton = serde_json::from_str(&text).map_err(|e| MotionError::Io(e.to_string()))?;
        Skeleton::new(s.names, s.parents, s.offsets)
    }

    pub fn rest_positions(&self) -> Vec<[f64; 3]> {
        self.forward_kinematics(&vec![RotationMatrix::identity(); self.len()], [0.0; 3])
    }

    /// Per-frame joint positions of a 55-joint clip. With `include_translation`
    /// false the root stays at its rest location.
    pub fn clip_positions(&self, clip: &MotionClip, include_translation: bool) -> Result<Vec<Vec<[f64; 3]>>, MotionError> {
        if self.len() != NUM_JOINTS {
            return Err(MotionError::Shape(format!("skeleton has {} joints, clip has {NUM_JOINTS}", self.len())));
        }
        clip.frames
            .iter()
            .map(|f| {
                let rots = f.rotation_matrices()?;
                let root = if include_translation { f.translation } else { [0.0; 3] };
                Ok(self.forward_kinematics(&rots, root))
            })
            .collect()
    }
}

/// Labels contacts from joint heights: 1 where the contact joint is below
/// `height_threshold` along `up_axis`, else 0.
pub fn label_contacts(clip: &mut MotionClip, skeleton: &Skeleton, up_axis: usize, height_threshold: f64) -> Result<(), MotionError> {
    let positions = skeleton.clip_positions(clip, true)?;
    for (frame, pos) in clip.frames.iter_mut().zip(positions) {
        for (slot, &j) in CONTACT_JOINTS.iter().enumerate() {
            frame.contacts[slot] = if pos[j][up_axis] < height_threshold { 1.0 } else { 0.0 };
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::rot6d_from_matrix;

    #[test]
    fn layout_widths() {
        assert_eq!(FRAME_DIMS, 437);
        assert_eq!(TRANSLATION_OFFSET, 434);
        assert_eq!(MotionFrame::rest().to_vector().len(), FRAME_DIMS);
    }

    #[test]
    fn parents_precede_children() {
        for (i, p) in JOINT_PARENTS.iter().enumerate() {
            assert!(*p < i as i32);
        }
        assert_eq!(joint_index("right_thumb3"), Some(54));
        for j in THUMB_JOINTS {
            assert!(JOINT_NAMES[j].contains("thumb"));
        }
    }

    #[test]
    fn frame_vector_round_trip() {
        let mut f = MotionFrame::rest();
        f.rotations[3] = rot6d_from_matrix(&RotationMatrix::about_x(0.3)).unwrap();
        f.expression[7] = 0.25;
        f.contacts = [1.0, 0.0, 1.0, 0.0];
        f.translation = [0.1, 0.9, -0.2];
        assert_eq!(MotionFrame::from_vector(&f.to_vector()).unwrap(), f);
        assert!(MotionFrame::from_vector(&[0.0; 10]).is_err());
    }

    #[test]
    fn fk_chain() {
        let sk = Skeleton::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![None, Some(0), Some(1)],
            vec![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
        )
        .unwrap();
        let rots = [RotationMatrix::identity(), RotationMatrix::about_z(std::f64::consts::FRAC_PI_2), RotationMatrix::identity()];
        let p = sk.forward_kinematics(&rots, [0.0, 0.0, 5.0]);
        let expected = [[0.0, 1.0, 5.0], [1.0, 1.0, 5.0], [1.0, 2.0, 5.0]];
        for (a, b) in p.iter().zip(expected) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn skeleton_rejects_bad_trees() {
        assert!(Skeleton::new(vec!["a".into(), "b".into()], vec![None, None], vec![[0.0; 3]; 2]).is_err());
        assert!(Skeleton::new(vec!["a".into(), "b".into()], vec![Some(1), None], vec![[0.0; 3]; 2]).is_err());
    }
}
