//! Biovision Hierarchy (BVH) reading, writing and conversion to motion clips.
//!
//! Angles are degrees in the file and radians everywhere else; the conversion
//! happens only at this boundary. Each joint's Euler composition order is the
//! order its rotation channels are listed in.

use crate::motion::{MotionClip, MotionError, MotionFrame, Skeleton, JOINT_NAMES, JOINT_PARENTS, NUM_JOINTS};
use crate::rotation::{
    matrix_from_euler, matrix_to_axis_angle, rot6d_from_matrix, AxisAngle, Axis, RotationMatrix,
};
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BvhError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("line {line}: frame has {found} channel values, expected {expected}")]
    ChannelCount { line: usize, expected: usize, found: usize },
    #[error("declared {declared} frames but found {found}")]
    FrameCount { declared: usize, found: usize },
    #[error("missing MOTION section")]
    MissingMotion,
    #[error("duplicate joint name '{0}'")]
    DuplicateJoint(String),
    #[error("frame time must be positive, got {0}")]
    FrameTime(f64),
    #[error("joint map does not cover target joints: {}", .0.join(", "))]
    UnmappedJoints(Vec<String>),
    #[error("joint map references joints absent from the document: {}", .0.join(", "))]
    UnknownSourceJoints(Vec<String>),
    #[error("invalid document: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Xposition,
    Yposition,
    Zposition,
    Xrotation,
    Yrotation,
    Zrotation,
}

impl Channel {
    fn parse(s: &str) -> Option<Channel> {
        Some(match s.to_ascii_lowercase().as_str() {
            "xposition" => Channel::Xposition,
            "yposition" => Channel::Yposition,
            "zposition" => Channel::Zposition,
            "xrotation" => Channel::Xrotation,
            "yrotation" => Channel::Yrotation,
            "zrotation" => Channel::Zrotation,
            _ => return None,
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Channel::Xposition => "Xposition",
            Channel::Yposition => "Yposition",
            Channel::Zposition => "Zposition",
            Channel::Xrotation => "Xrotation",
            Channel::Yrotation => "Yrotation",
            Channel::Zrotation => "Zrotation",
        }
    }

    pub fn rotation_axis(&self) -> Option<Axis> {
        match self {
            Channel::Xrotation => Some(Axis::X),
            Channel::Yrotation => Some(Axis::Y),
            Channel::Zrotation => Some(Axis::Z),
            _ => None,
        }
    }

    pub fn position_axis(&self) -> Option<usize> {
        match self {
            Channel::Xposition => Some(0),
            Channel::Yposition => Some(1),
            Channel::Zposition => Some(2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvhJoint {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: [f64; 3],
    pub channels: Vec<Channel>,
    pub end_site: Option<[f64; 3]>,
}

/// Joints are stored in file (depth-first) order, so parents precede children.
#[derive(Debug, Clone, PartialEq)]
pub struct BvhDocument {
    pub joints: Vec<BvhJoint>,
    pub frame_time: f64,
    pub frames: Vec<Vec<f64>>,
}

/// Local joint rotations and root translation for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonPose {
    pub rotations: Vec<AxisAngle>,
    pub root_translation: [f64; 3],
}

impl BvhDocument {
    pub fn channel_count(&self) -> usize {
        self.joints.iter().map(|j| j.channels.len()).sum()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Offset of each joint's first channel within a frame row.
    pub fn channel_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.joints
            .iter()
            .map(|j| {
                let o = acc;
                acc += j.channels.len();
                o
            })
            .collect()
    }

    pub fn children(&self, joint: usize) -> impl Iterator<Item = usize> + '_ {
        self.joints.iter().enumerate().filter(move |(_, j)| j.parent == Some(joint)).map(|(i, _)| i)
    }

    pub fn validate(&self) -> Result<(), BvhError> {
        let mut seen = HashSet::new();
        for (i, j) in self.joints.iter().enumerate() {
            if !seen.insert(j.name.as_str()) {
                return Err(BvhError::DuplicateJoint(j.name.clone()));
            }
            if let Some(p) = j.parent {
                if p >= i {
                    return Err(BvhError::Invalid(format!("joint '{}' precedes its parent", j.name)));
                }
            }
        }
        if !(self.frame_time > 0.0) {
            return Err(BvhError::FrameTime(self.frame_time));
        }
        let c = self.channel_count();
        for (i, f) in self.frames.iter().enumerate() {
            if f.len() != c {
                return Err(BvhError::ChannelCount { line: i + 1, expected: c, found: f.len() });
            }
        }
        Ok(())
    }

    /// Local rotation of `joint` at `frame` from its rotation channels.
    pub fn local_rotation(&self, frame: usize, joint: usize) -> RotationMatrix {
        let start = self.channel_offsets()[joint];
        self.local_rotation_at(&self.frames[frame][start..start + self.joints[joint].channels.len()], joint)
    }

    fn local_rotation_at(&self, values: &[f64], joint: usize) -> RotationMatrix {
        let mut order = Vec::with_capacity(3);
        let mut angles = Vec::with_capacity(3);
        for (ch, v) in self.joints[joint].channels.iter().zip(values) {
            if let Some(axis) = ch.rotation_axis() {
                order.push(axis);
                angles.push(v.to_radians());
            }
        }
        matrix_from_euler(&order, &angles)
    }

    fn root_translation_at(&self, row: &[f64]) -> [f64; 3] {
        let mut t = [0.0; 3];
        for (ch, v) in self.joints[0].channels.iter().zip(row) {
            if let Some(axis) = ch.position_axis() {
                t[axis] = *v;
            }
        }
        t
    }

    pub fn skeleton_poses(&self) -> Vec<SkeletonPose> {
        let offsets = self.channel_offsets();
        self.frames
            .iter()
            .map(|row| SkeletonPose {
                rotations: (0..self.joints.len())
                    .map(|j| {
                        let vals = &row[offsets[j]..offsets[j] + self.joints[j].channels.len()];
                        matrix_to_axis_angle(&self.local_rotation_at(vals, j))
                    })
                    .collect(),
                root_translation: if self.joints.is_empty() { [0.0; 3] } else { self.root_translation_at(row) },
            })
            .collect()
    }

    /// Global rest positions of every joint (offsets accumulated).
    pub fn rest_positions(&self) -> Vec<[f64; 3]> {
        let mut pos: Vec<[f64; 3]> = Vec::with_capacity(self.joints.len());
        for j in &self.joints {
            let base = j.parent.map(|p| pos[p]).unwrap_or([0.0; 3]);
            pos.push([base[0] + j.offset[0], base[1] + j.offset[1], base[2] + j.offset[2]]);
        }
        pos
    }

    /// Rest positions of joints followed by end sites.
    pub fn rest_points(&self) -> Vec<[f64; 3]> {
        let pos = self.rest_positions();
        let mut pts = pos.clone();
        for (j, joint) in self.joints.iter().enumerate() {
            if let Some(e) = joint.end_site {
                pts.push([pos[j][0] + e[0], pos[j][1] + e[1], pos[j][2] + e[2]]);
            }
        }
        pts
    }
}

/// Target (55-joint model) name → source (document) joint name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointMap {
    pub entries: Vec<(String, String)>,
}

impl JointMap {
    pub fn new(entries: Vec<(String, String)>) -> Self {
        JointMap { entries }
    }

    /// Map for the 78-joint reference rig (see [`crate::synth::reference_rig`]).
    /// Intermediate joints (Spine3, Neck1, fore-feet, twists, finger tips and
    /// nubs) stay unmapped.
    pub fn reference_rig() -> Self {
        let mut e: Vec<(String, String)> = [
            ("pelvis", "Hips"),
            ("spine1", "Spine"),
            ("spine2", "Spine1"),
            ("spine3", "Spine2"),
            ("neck", "Neck"),
            ("head", "Head"),
            ("jaw", "Jaw"),
            ("left_eye", "LeftEye"),
            ("right_eye", "RightEye"),
        ]
        .iter()
        .map(|(t, s)| (t.to_string(), s.to_string()))
        .collect();
        for (side, src) in [("left", "Left"), ("right", "Right")] {
            let pairs = [
                ("hip", "UpLeg"),
                ("knee", "Leg"),
                ("ankle", "Foot"),
                ("foot", "ToeBase"),
                ("collar", "Shoulder"),
                ("shoulder", "Arm"),
                ("elbow", "ForeArm"),
                ("wrist", "Hand"),
            ];
            for (t, s) in pairs {
                e.push((format!("{side}_{t}"), format!("{src}{s}")));
            }
            for finger in ["index", "middle", "pinky", "ring", "thumb"] {
                let cap = format!("{}{}", finger[..1].to_uppercase(), &finger[1..]);
                for k in 1..=3 {
                    e.push((format!("{side}_{finger}{k}"), format!("{src}Hand{cap}{k}")));
                }
            }
        }
        JointMap::new(e)
    }

    pub fn source_for(&self, target: &str) -> Option<&str> {
        self.entries.iter().find(|(t, _)| t == target).map(|(_, s)| s.as_str())
    }

    pub fn remove_target(&mut self, target: &str) {
        self.entries.retain(|(t, _)| t != target);
    }

    /// Resolves the document joint index for each of the 55 target joints.
    pub fn resolve(&self, doc: &BvhDocument) -> Result<Vec<usize>, BvhError> {
        let missing: Vec<String> =
            JOINT_NAMES.iter().filter(|t| self.source_for(t).is_none()).map(|t| t.to_string()).collect();
        if !missing.is_empty() {
            return Err(BvhError::UnmappedJoints(missing));
        }
        let names: HashMap<&str, usize> = doc.joints.iter().enumerate().map(|(i, j)| (j.name.as_str(), i)).collect();
        let mut unknown = Vec::new();
        let mut out = Vec::with_capacity(NUM_JOINTS);
        for t in JOINT_NAMES {
            let s = self.source_for(t).expect("checked above");
            match names.get(s) {
                Some(&i) => out.push(i),
                None => {
                    if !unknown.iter().any(|u: &String| u == s) {
                        unknown.push(s.to_string());
                    }
                }
            }
        }
        if !unknown.is_empty() {
            return Err(BvhError::UnknownSourceJoints(unknown));
        }
        Ok(out)
    }
}

struct Tokens<'a> {
    lines: Vec<&'a str>,
    line: usize,
    col: usize,
}

struct Tok<'a> {
    text: &'a str,
    line: usize,
    column: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        Tokens { lines: text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)).collect(), line: 0, col: 0 }
    }

    fn next(&mut self) -> Option<Tok<'a>> {
        while self.line < self.lines.len() {
            let l = self.lines[self.line];
            let rest = &l[self.col..];
            let trimmed = rest.trim_start();
            if trimmed.is_empty() {
                self.line += 1;
                self.col = 0;
                continue;
            }
            let start = self.col + (rest.len() - trimmed.len());
            let len = trimmed.find(char::is_whitespace).unwrap_or(trimmed.len());
            self.col = start + len;
            return Some(Tok { text: &l[start..start + len], line: self.line + 1, column: start + 1 });
        }
        None
    }

    fn eof_error(&self, what: &str) -> BvhError {
        BvhError::Syntax { line: self.lines.len(), column: 1, message: format!("unexpected end of input, expected {what}") }
    }

    fn expect(&mut self, word: &str) -> Result<Tok<'a>, BvhError> {
        let t = self.next().ok_or_else(|| self.eof_error(word))?;
        if !t.text.eq_ignore_ascii_case(word) {
            return Err(syntax(&t, format!("expected '{word}', found '{}'", t.text)));
        }
        Ok(t)
    }

    fn number(&mut self) -> Result<f64, BvhError> {
        let t = self.next().ok_or_else(|| self.eof_error("a number"))?;
        t.text.parse::<f64>().map_err(|_| syntax(&t, format!("expected a number, found '{}'", t.text)))
    }

    fn vec3(&mut self) -> Result<[f64; 3], BvhError> {
        Ok([self.number()?, self.number()?, self.number()?])
    }

    /// Remaining lines after the current one, as (1-based line number, text).
    fn remaining_lines(&self) -> impl Iterator<Item = (usize, &'a str)> + '_ {
        let start = if self.col == 0 { self.line } else { self.line + 1 };
        self.lines.iter().enumerate().skip(start).map(|(i, l)| (i + 1, *l))
    }
}

fn syntax(t: &Tok, message: String) -> BvhError {
    BvhError::Syntax { line: t.line, column: t.column, message }
}

pub fn parse_bvh(text: &str) -> Result<BvhDocument, BvhError> {
    let mut tk = Tokens::new(text);
    tk.expect("HIERARCHY")?;
    let mut joints: Vec<BvhJoint> = Vec::new();
    let mut motion_seen = false;
    while let Some(t) = tk.next() {
        if t.text.eq_ignore_ascii_case("ROOT") {
            parse_joint(&mut tk, &mut joints, None)?;
        } else if t.text.eq_ignore_ascii_case("MOTION") {
            motion_seen = true;
            break;
        } else {
            return Err(syntax(&t, format!("expected ROOT or MOTION, found '{}'", t.text)));
        }
    }
    if !motion_seen {
        return Err(BvhError::MissingMotion);
    }
    if joints.is_empty() {
        return Err(BvhError::Invalid("hierarchy has no joints".into()));
    }
    let mut seen = HashSet::new();
    for j in &joints {
        if !seen.insert(j.name.as_str()) {
            return Err(BvhError::DuplicateJoint(j.name.clone()));
        }
    }

    let t = tk.next().ok_or_else(|| tk.eof_error("'Frames:'"))?;
    if !t.text.eq_ignore_ascii_case("Frames:") {
        return Err(syntax(&t, format!("expected 'Frames:', found '{}'", t.text)));
    }
    let t = tk.next().ok_or_else(|| tk.eof_error("frame count"))?;
    let declared: usize = t.text.parse().map_err(|_| syntax(&t, format!("invalid frame count '{}'", t.text)))?;
    tk.expect("Frame")?;
    tk.expect("Time:")?;
    let frame_time = tk.number()?;
    if !(frame_time > 0.0) {
        return Err(BvhError::FrameTime(frame_time));
    }

    let expected: usize = joints.iter().map(|j| j.channels.len()).sum();
    let mut frames = Vec::with_capacity(declared);
    for (line_no, line) in tk.remaining_lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(expected);
        for (k, word) in line.split_whitespace().enumerate() {
            let v = word.parse::<f64>().map_err(|_| BvhError::Syntax {
                line: line_no,
                column: k + 1,
                message: format!("invalid channel value '{word}'"),
            })?;
            row.push(v);
        }
        if row.len() != expected {
            return Err(BvhError::ChannelCount { line: line_no, expected, found: row.len() });
        }
        frames.push(row);
    }
    if frames.len() != declared {
        return Err(BvhError::FrameCount { declared, found: frames.len() });
    }
    Ok(BvhDocument { joints, frame_time, frames })
}

fn parse_joint(tk: &mut Tokens, joints: &mut Vec<BvhJoint>, parent: Option<usize>) -> Result<(), BvhError> {
    let name = tk.next().ok_or_else(|| tk.eof_error("joint name"))?;
    if name.text == "{" {
        return Err(syntax(&name, "missing joint name".into()));
    }
    let name = name.text.to_string();
    tk.expect("{")?;
    tk.expect("OFFSET")?;
    let offset = tk.vec3()?;
    let idx = joints.len();
    joints.push(BvhJoint { name, parent, offset, channels: Vec::new(), end_site: None });
    loop {
        let t = tk.next().ok_or_else(|| tk.eof_error("'}'"))?;
        match t.text.to_ascii_uppercase().as_str() {
            "CHANNELS" => {
                let nt = tk.next().ok_or_else(|| tk.eof_error("channel count"))?;
                let n: usize = nt.text.parse().map_err(|_| syntax(&nt, format!("invalid channel count '{}'", nt.text)))?;
                let mut chans = Vec::with_capacity(n);
                for _ in 0..n {
                    let ct = tk.next().ok_or_else(|| tk.eof_error("channel label"))?;
                    chans.push(Channel::parse(ct.text).ok_or_else(|| syntax(&ct, format!("unknown channel '{}'", ct.text)))?);
                }
                joints[idx].channels = chans;
            }
            "JOINT" => parse_joint(tk, joints, Some(idx))?,
            "END" => {
                tk.expect("Site")?;
                tk.expect("{")?;
                tk.expect("OFFSET")?;
                let e = tk.vec3()?;
                tk.expect("}")?;
                joints[idx].end_site = Some(e);
            }
            "}" => return Ok(()),
            _ => return Err(syntax(&t, format!("unexpected token '{}'", t.text))),
        }
    }
}

pub fn write_bvh(doc: &BvhDocument) -> String {
    let mut out = String::from("HIERARCHY\n");
    for (i, j) in doc.joints.iter().enumerate() {
        if j.parent.is_none() {
            write_joint(doc, i, 0, &mut out);
        }
    }
    out.push_str("MOTION\n");
    let _ = writeln!(out, "Frames: {}", doc.frames.len());
    let _ = writeln!(out, "Frame Time: {}", doc.frame_time);
    for row in &doc.frames {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

fn write_joint(doc: &BvhDocument, idx: usize, depth: usize, out: &mut String) {
    let j = &doc.joints[idx];
    let ind = "\t".repeat(depth);
    let kw = if j.parent.is_none() { "ROOT" } else { "JOINT" };
    let _ = writeln!(out, "{ind}{kw} {}", j.name);
    let _ = writeln!(out, "{ind}{{");
    let _ = writeln!(out, "{ind}\tOFFSET {:.6} {:.6} {:.6}", j.offset[0], j.offset[1], j.offset[2]);
    if !j.channels.is_empty() {
        let labels: Vec<&str> = j.channels.iter().map(Channel::label).collect();
        let _ = writeln!(out, "{ind}\tCHANNELS {} {}", j.channels.len(), labels.join(" "));
    }
    for c in doc.children(idx).collect::<Vec<_>>() {
        write_joint(doc, c, depth + 1, out);
    }
    if let Some(e) = j.end_site {
        let _ = writeln!(out, "{ind}\tEnd Site");
        let _ = writeln!(out, "{ind}\t{{");
        let _ = writeln!(out, "{ind}\t\tOFFSET {:.6} {:.6} {:.6}", e[0], e[1], e[2]);
        let _ = writeln!(out, "{ind}\t}}");
    }
    let _ = writeln!(out, "{ind}}}");
}

/// Field-by-field comparison with an absolute tolerance on every real.
pub fn documents_match(a: &BvhDocument, b: &BvhDocument, tol: f64) -> bool {
    let close = |x: &[f64], y: &[f64]| x.len() == y.len() && x.iter().zip(y).all(|(p, q)| (p - q).abs() <= tol);
    a.joints.len() == b.joints.len()
        && a.joints.iter().zip(&b.joints).all(|(p, q)| {
            p.name == q.name
                && p.parent == q.parent
                && p.channels == q.channels
                && close(&p.offset, &q.offset)
                && match (p.end_site, q.end_site) {
                    (Some(x), Some(y)) => close(&x, &y),
                    (None, None) => true,
                    _ => false,
                }
        })
        && (a.frame_time - b.frame_time).abs() <= tol
        && a.frames.len() == b.frames.len()
        && a.frames.iter().zip(&b.frames).all(|(x, y)| close(x, y))
}

pub fn to_motion_clip(doc: &BvhDocument, map: &JointMap) -> Result<MotionClip, BvhError> {
    to_motion_clip_scaled(doc, map, 1.0)
}

/// Like [`to_motion_clip`], multiplying the root translation by `unit_scale`
/// (e.g. 0.01 for centimeter files).
pub fn to_motion_clip_scaled(doc: &BvhDocument, map: &JointMap, unit_scale: f64) -> Result<MotionClip, BvhError> {
    doc.validate()?;
    let sources = map.resolve(doc)?;
    let offsets = doc.channel_offsets();
    let mut frames = Vec::with_capacity(doc.frames.len());
    for row in &doc.frames {
        let mut f = MotionFrame::rest();
        for (target, &src) in sources.iter().enumerate() {
            let vals = &row[offsets[src]..offsets[src] + doc.joints[src].channels.len()];
            let r = doc.local_rotation_at(vals, src);
            f.rotations[target] = rot6d_from_matrix(&r).map_err(|e| BvhError::Invalid(e.to_string()))?;
        }
        let t = doc.root_translation_at(row);
        f.translation = [t[0] * unit_scale, t[1] * unit_scale, t[2] * unit_scale];
        frames.push(f);
    }
    Ok(MotionClip { fps: 1.0 / doc.frame_time, frames })
}

/// 55-joint skeleton whose rest offsets come from the mapped document joints.
pub fn skeleton_from_bvh(doc: &BvhDocument, map: &JointMap, unit_scale: f64) -> Result<Skeleton, BvhError> {
    let sources = map.resolve(doc)?;
    let rest = doc.rest_positions();
    let mut offsets = Vec::with_capacity(NUM_JOINTS);
    let mut parents = Vec::with_capacity(NUM_JOINTS);
    for t in 0..NUM_JOINTS {
        let p = rest[sources[t]];
        let parent = usize::try_from(JOINT_PARENTS[t]).ok();
        let base = parent.map(|q| rest[sources[q]]).unwrap_or([0.0; 3]);
        offsets.push([(p[0] - base[0]) * unit_scale, (p[1] - base[1]) * unit_scale, (p[2] - base[2]) * unit_scale]);
        parents.push(parent);
    }
    Skeleton::new(JOINT_NAMES.iter().map(|s| s.to_string()).collect(), parents, offsets)
        .map_err(|e: MotionError| BvhError::Invalid(e.to_string()))
}

/// Writes local rotations back into a document row, preserving channel order.
pub fn set_local_rotation(doc: &mut BvhDocument, frame: usize, joint: usize, rotation: &RotationMatrix) -> Result<(), BvhError> {
    let start = doc.channel_offsets()[joint];
    let axes: Vec<(usize, Axis)> = doc.joints[joint]
        .channels
        .iter()
        .enumerate()
        .filter_map(|(k, c)| c.rotation_axis().map(|a| (k, a)))
        .collect();
    if axes.len() != 3 {
        return Err(BvhError::Invalid(format!("joint '{}' does not have three rotation channels", doc.joints[joint].name)));
    }
    let order = [axes[0].1, axes[1].1, axes[2].1];
    let angles = crate::rotation::euler_from_matrix(order, rotation).map_err(|e| BvhError::Invalid(e.to_string()))?;
    for ((k, _), a) in axes.iter().zip(angles) {
        doc.frames[frame][start + k] = a.to_degrees();
    }
    Ok(())
}

/// Local rotation as axis-angle.
pub fn local_axis_angle(doc: &BvhDocument, frame: usize, joint: usize) -> AxisAngle {
    matrix_to_axis_angle(&doc.local_rotation(frame, joint))
}
