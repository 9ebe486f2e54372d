//! Minimal parametric body: shape blendshapes, linear blend skinning, vertex
//! normals and the marker placement used by the fitter.
//!
//! Every geometric function is generic over [`Real`] so the same code runs in
//! plain `f64` and on the reverse-mode tape.

use crate::autodiff::Real;
use crate::container::{Container, ContainerError};
use serde_json::json;
use std::collections::BTreeSet;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BodyModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("invalid marker layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("marker layout csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Vec3<T> = [T; 3];
pub type Mat3<T> = [[T; 3]; 3];

#[derive(Debug, Clone)]
pub struct BodyModel {
    pub template: Vec<[f64; 3]>,
    /// `V × 3 × B`, index `(v * 3 + c) * B + b`.
    pub shape_basis: Vec<f64>,
    pub num_betas: usize,
    /// `J × V`.
    pub joint_regressor: Vec<f64>,
    pub parents: Vec<Option<usize>>,
    /// `V × J`.
    pub skin_weights: Vec<f64>,
    pub faces: Vec<[usize; 3]>,
    pub joint_names: Vec<String>,
    order: Vec<usize>,
    joint_template: Vec<[f64; 3]>,
    joint_shape: Vec<f64>,
    skin_sparse: Vec<Vec<(usize, f64)>>,
    vertex_faces: Vec<Vec<usize>>,
}

/// Marker `k` sits on vertex `marker_vertex[k]`, `offsets[k]` meters along its normal.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerLayout {
    pub names: Vec<String>,
    pub marker_vertex: Vec<usize>,
    pub offsets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapePose {
    pub beta: Vec<f64>,
    pub theta: Vec<[f64; 3]>,
    pub gamma: [f64; 3],
}

impl ShapePose {
    pub fn rest(model: &BodyModel) -> Self {
        ShapePose { beta: vec![0.0; model.num_betas], theta: vec![[0.0; 3]; model.num_joints()], gamma: [0.0; 3] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normals {
    pub normals: Vec<[f64; 3]>,
    /// Vertices without incident area; their normal is zero.
    pub isolated: Vec<usize>,
}

impl BodyModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        template: Vec<[f64; 3]>,
        shape_basis: Vec<f64>,
        num_betas: usize,
        joint_regressor: Vec<f64>,
        parents: Vec<Option<usize>>,
        skin_weights: Vec<f64>,
        faces: Vec<[usize; 3]>,
        joint_names: Vec<String>,
    ) -> Result<Self, BodyModelError> {
        let v = template.len();
        let j = parents.len();
        let dim = |what: &str, got: usize, want: usize| {
            if got != want {
                Err(BodyModelError::Dimension(format!("{what}: {got} values, expected {want}")))
            } else {
                Ok(())
            }
        };
        dim("shape_basis", shape_basis.len(), v * 3 * num_betas)?;
        dim("joint_regressor", joint_regressor.len(), j * v)?;
        dim("skin_weights", skin_weights.len(), v * j)?;
        dim("joint_names", joint_names.len(), j)?;
        if j == 0 {
            return Err(BodyModelError::Invalid("model has no joints".into()));
        }
        let all = template.iter().flatten().chain(&shape_basis).chain(&joint_regressor).chain(&skin_weights);
        if all.into_iter().any(|x| !x.is_finite()) {
            return Err(BodyModelError::Invalid("non-finite model value".into()));
        }
        for (vi, row) in skin_weights.chunks_exact(j).enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(BodyModelError::Invalid(format!("skin weights of vertex {vi} sum to {s}")));
            }
        }
        for (ji, row) in joint_regressor.chunks_exact(v.max(1)).enumerate().take(j) {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(BodyModelError::Invalid(format!("regressor row {ji} sums to {s}")));
            }
        }
        for f in &faces {
            if f.iter().any(|&i| i >= v) {
                return Err(BodyModelError::Invalid(format!("face {f:?} references a missing vertex")));
            }
        }
        let order = topological_order(&parents)?;

        let mut joint_template = vec![[0.0; 3]; j];
        let mut joint_shape = vec![0.0; j * 3 * num_betas];
        for ji in 0..j {
            for vi in 0..v {
                let w = joint_regressor[ji * v + vi];
                if w == 0.0 {
                    continue;
                }
                for c in 0..3 {
                    joint_template[ji][c] += w * template[vi][c];
                    for b in 0..num_betas {
                        joint_shape[(ji * 3 + c) * num_betas + b] += w * shape_basis[(vi * 3 + c) * num_betas + b];
                    }
                }
            }
        }
        let skin_sparse = skin_weights
            .chunks_exact(j)
            .map(|row| row.iter().enumerate().filter(|(_, w)| **w != 0.0).map(|(k, w)| (k, *w)).collect())
            .collect();
        let mut vertex_faces = vec![Vec::new(); v];
        for (fi, f) in faces.iter().enumerate() {
            for &vi in f {
                if !vertex_faces[vi].contains(&fi) {
                    vertex_faces[vi].push(fi);
                }
            }
        }
        Ok(BodyModel {
            template,
            shape_basis,
            num_betas,
            joint_regressor,
            parents,
            skin_weights,
            faces,
            joint_names,
            order,
            joint_template,
            joint_shape,
            skin_sparse,
            vertex_faces,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.template.len()
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn check_pose(&self, sp: &ShapePose) -> Result<(), BodyModelError> {
        if sp.beta.len() != self.num_betas {
            return Err(BodyModelError::Dimension(format!("beta has {} entries, model has {}", sp.beta.len(), self.num_betas)));
        }
        if sp.theta.len() != self.num_joints() {
            return Err(BodyModelError::Dimension(format!(
                "theta has {} joints, model has {}",
                sp.theta.len(),
                self.num_joints()
            )));
        }
        Ok(())
    }

    /// Posed global joint rotations and positions (before the global translation).
    pub fn pose_joints<T: Real>(&self, beta: &[T], theta: &[Vec3<T>]) -> PosedJoints<T> {
        let j = self.num_joints();
        let b = self.num_betas;
        let rest: Vec<Vec3<T>> = (0..j)
            .map(|ji| {
                let mut p = [T::cst(self.joint_template[ji][0]), T::cst(self.joint_template[ji][1]), T::cst(self.joint_template[ji][2])];
                for (c, pc) in p.iter_mut().enumerate() {
                    for (bi, beta_b) in beta.iter().enumerate() {
                        let s = self.joint_shape[(ji * 3 + c) * b + bi];
                        if s != 0.0 {
                            *pc = *pc + beta_b.scale(s);
                        }
                    }
                }
                p
            })
            .collect();
        let mut rot = vec![identity::<T>(); j];
        let mut pos = vec![[T::zero(); 3]; j];
        for &ji in &self.order {
            let local = rodrigues(theta[ji]);
            match self.parents[ji] {
                None => {
                    rot[ji] = local;
                    pos[ji] = rest[ji];
                }
                Some(p) => {
                    let bone = sub(rest[ji], rest[p]);
                    pos[ji] = add(pos[p], mat_vec(&rot[p], bone));
                    rot[ji] = mat_mul(&rot[p], &local);
                }
            }
        }
        PosedJoints { rest, rotations: rot, positions: pos }
    }

    /// Shaped template vertex `T(β)_v`.
    pub fn shaped_vertex<T: Real>(&self, beta: &[T], v: usize) -> Vec3<T> {
        let b = self.num_betas;
        let mut p = [T::cst(self.template[v][0]), T::cst(self.template[v][1]), T::cst(self.template[v][2])];
        for (c, pc) in p.iter_mut().enumerate() {
            for (bi, beta_b) in beta.iter().enumerate() {
                let s = self.shape_basis[(v * 3 + c) * b + bi];
                if s != 0.0 {
                    *pc = *pc + beta_b.scale(s);
                }
            }
        }
        p
    }

    /// Skinned position of vertex `v`.
    pub fn skin_vertex<T: Real>(&self, posed: &PosedJoints<T>, beta: &[T], gamma: Vec3<T>, v: usize) -> Vec3<T> {
        let shaped = self.shaped_vertex(beta, v);
        let mut out = gamma;
        for &(ji, w) in &self.skin_sparse[v] {
            let local = sub(shaped, posed.rest[ji]);
            let moved = add(mat_vec(&posed.rotations[ji], local), posed.positions[ji]);
            for c in 0..3 {
                out[c] = out[c] + moved[c].scale(w);
            }
        }
        out
    }

    pub fn skin_generic<T: Real>(&self, beta: &[T], theta: &[Vec3<T>], gamma: Vec3<T>) -> Vec<Vec3<T>> {
        let posed = self.pose_joints(beta, theta);
        (0..self.num_vertices()).map(|v| self.skin_vertex(&posed, beta, gamma, v)).collect()
    }

    pub fn skin(&self, sp: &ShapePose) -> Result<Vec<[f64; 3]>, BodyModelError> {
        self.check_pose(sp)?;
        Ok(self.skin_generic(&sp.beta, &sp.theta, sp.gamma))
    }

    pub fn vertex_normals(&self, sp: &ShapePose) -> Result<Normals, BodyModelError> {
        let verts = self.skin(sp)?;
        Ok(self.normals_of(&verts))
    }

    /// Area-weighted vertex normals of an arbitrary vertex set on this mesh.
    pub fn normals_of(&self, verts: &[[f64; 3]]) -> Normals {
        let mut isolated = Vec::new();
        let normals = (0..verts.len())
            .map(|v| {
                let n = vertex_normal_from(&self.faces, &self.vertex_faces[v], |i| verts[i]);
                if n.is_none() {
                    isolated.push(v);
                }
                n.unwrap_or([0.0; 3])
            })
            .collect();
        Normals { normals, isolated }
    }

    pub fn simulate_markers(&self, layout: &MarkerLayout, sp: &ShapePose) -> Result<Vec<[f64; 3]>, BodyModelError> {
        self.check_pose(sp)?;
        layout.validate(self)?;
        let stencil = MarkerStencil::new(self, layout);
        Ok(stencil.markers(self, &layout.offsets, &sp.beta, &sp.theta, sp.gamma))
    }

    pub fn to_container(&self) -> Container {
        let v = self.num_vertices();
        let j = self.num_joints();
        let parents: Vec<i64> = self.parents.iter().map(|p| p.map_or(-1, |p| p as i64)).collect();
        let mut c = Container::new("body_model").with_meta(json!({
            "num_vertices": v,
            "num_joints": j,
            "num_betas": self.num_betas,
            "num_faces": self.faces.len(),
            "parents": parents,
            "joint_names": self.joint_names,
        }));
        c.push("template", &[v, 3], self.template.iter().flatten().copied().collect()).expect("shape");
        c.push("shape_basis", &[v, 3, self.num_betas], self.shape_basis.clone()).expect("shape");
        c.push("joint_regressor", &[j, v], self.joint_regressor.clone()).expect("shape");
        c.push("skin_weights", &[v, j], self.skin_weights.clone()).expect("shape");
        c.push("faces", &[self.faces.len(), 3], self.faces.iter().flatten().map(|&i| i as f64).collect()).expect("shape");
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, BodyModelError> {
        c.expect_kind("body_model")?;
        let meta_usize = |k: &str| {
            c.meta.get(k).and_then(|x| x.as_u64()).map(|x| x as usize).ok_or_else(|| BodyModelError::Invalid(format!("missing '{k}'")))
        };
        let v = meta_usize("num_vertices")?;
        let j = meta_usize("num_joints")?;
        let b = meta_usize("num_betas")?;
        let parents: Vec<Option<usize>> = c
            .meta
            .get("parents")
            .and_then(|p| p.as_array())
            .ok_or_else(|| BodyModelError::Invalid("missing 'parents'".into()))?
            .iter()
            .map(|x| x.as_i64().map(|p| usize::try_from(p).ok()))
            .collect::<Option<_>>()
            .ok_or_else(|| BodyModelError::Invalid("non-integer parent".into()))?;
        let joint_names: Vec<String> = match c.meta.get("joint_names").and_then(|n| n.as_array()) {
            Some(a) => a.iter().map(|x| x.as_str().unwrap_or_default().to_string()).collect(),
            None => (0..j).map(|i| format!("joint{i}")).collect(),
        };
        let (_, template) = c.array_shaped("template", &[Some(v), Some(3)])?;
        let (_, shape) = c.array_shaped("shape_basis", &[Some(v), Some(3), Some(b)])?;
        let (_, reg) = c.array_shaped("joint_regressor", &[Some(j), Some(v)])?;
        let (_, skin) = c.array_shaped("skin_weights", &[Some(v), Some(j)])?;
        let (_, faces) = c.array_shaped("faces", &[None, Some(3)])?;
        let faces = faces
            .chunks_exact(3)
            .map(|f| {
                let idx = |x: f64| {
                    if x >= 0.0 && x.fract() == 0.0 {
                        Ok(x as usize)
                    } else {
                        Err(BodyModelError::Invalid(format!("bad face index {x}")))
                    }
                };
                Ok([idx(f[0])?, idx(f[1])?, idx(f[2])?])
            })
            .collect::<Result<_, BodyModelError>>()?;
        BodyModel::new(
            template.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect(),
            shape.to_vec(),
            b,
            reg.to_vec(),
            parents,
            skin.to_vec(),
            faces,
            joint_names,
        )
    }

    pub fn load(path: &Path) -> Result<Self, BodyModelError> {
        BodyModel::from_container(&Container::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), BodyModelError> {
        Ok(self.to_container().write(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct PosedJoints<T> {
    pub rest: Vec<Vec3<T>>,
    pub rotations: Vec<Mat3<T>>,
    pub positions: Vec<Vec3<T>>,
}

impl MarkerLayout {
    pub fn validate(&self, model: &BodyModel) -> Result<(), BodyModelError> {
        if self.names.len() != self.marker_vertex.len() || self.names.len() != self.offsets.len() {
            return Err(BodyModelError::Layout("names, vertices and offsets differ in length".into()));
        }
        if let Some(v) = self.marker_vertex.iter().find(|&&v| v >= model.num_vertices()) {
            return Err(BodyModelError::Layout(format!("vertex index {v} out of range")));
        }
        if self.offsets.iter().any(|d| !d.is_finite()) {
            return Err(BodyModelError::Layout("non-finite offset".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Reads `marker_name,vertex_index,offset_m` rows (with header).
    pub fn read_csv(path: &Path) -> Result<Self, BodyModelError> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut layout = MarkerLayout { names: vec![], marker_vertex: vec![], offsets: vec![] };
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(BodyModelError::Layout(format!("expected 3 columns, found {}", rec.len())));
            }
            let parse_err = |what: &str| BodyModelError::Layout(format!("invalid {what} in row {:?}", rec));
            layout.names.push(rec[0].trim().to_string());
            layout.marker_vertex.push(rec[1].trim().parse().map_err(|_| parse_err("vertex_index"))?);
            layout.offsets.push(rec[2].trim().parse().map_err(|_| parse_err("offset_m"))?);
        }
        Ok(layout)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), BodyModelError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["marker_name", "vertex_index", "offset_m"])?;
        for k in 0..self.len() {
            w.write_record([self.names[k].clone(), self.marker_vertex[k].to_string(), format!("{}", self.offsets[k])])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The vertices (and incident faces) needed to place a marker set, so marker
/// evaluation skins only the marker vertices and their one-ring.
#[derive(Debug, Clone)]
pub struct MarkerStencil {
    vertices: Vec<usize>,
    marker_slot: Vec<usize>,
    marker_faces: Vec<Vec<[usize; 3]>>,
}

impl MarkerStencil {
    pub fn new(model: &BodyModel, layout: &MarkerLayout) -> Self {
        let mut needed = BTreeSet::new();
        for &v in &layout.marker_vertex {
            needed.insert(v);
            for &f in &model.vertex_faces[v] {
                needed.extend(model.faces[f]);
            }
        }
        let vertices: Vec<usize> = needed.into_iter().collect();
        let slot = |v: usize| vertices.binary_search(&v).expect("vertex in stencil");
        let marker_slot = layout.marker_vertex.iter().map(|&v| slot(v)).collect();
        let marker_faces = layout
            .marker_vertex
            .iter()
            .map(|&v| model.vertex_faces[v].iter().map(|&f| model.faces[f].map(slot)).collect())
            .collect();
        MarkerStencil { vertices, marker_slot, marker_faces }
    }

    /// Skinned marker vertices and their normals.
    pub fn surface<T: Real>(&self, model: &BodyModel, beta: &[T], theta: &[Vec3<T>], gamma: Vec3<T>) -> (Vec<Vec3<T>>, Vec<Vec3<T>>) {
        let posed = model.pose_joints(beta, theta);
        let verts: Vec<Vec3<T>> = self.vertices.iter().map(|&v| model.skin_vertex(&posed, beta, gamma, v)).collect();
        let mut points = Vec::with_capacity(self.marker_slot.len());
        let mut normals = Vec::with_capacity(self.marker_slot.len());
        for (k, &s) in self.marker_slot.iter().enumerate() {
            points.push(verts[s]);
            normals.push(area_weighted_normal(&self.marker_faces[k], |i| verts[i]).unwrap_or([T::zero(); 3]));
        }
        (points, normals)
    }

    /// Latent markers `S_H + d · N_H`.
    pub fn markers<T: Real>(&self, model: &BodyModel, offsets: &[T], beta: &[T], theta: &[Vec3<T>], gamma: Vec3<T>) -> Vec<Vec3<T>> {
        let (points, normals) = self.surface(model, beta, theta, gamma);
        points
            .iter()
            .zip(&normals)
            .zip(offsets)
            .map(|((p, n), &d)| [p[0] + d * n[0], p[1] + d * n[1], p[2] + d * n[2]])
            .collect()
    }
}

fn vertex_normal_from(faces: &[[usize; 3]], incident: &[usize], pos: impl Fn(usize) -> [f64; 3]) -> Option<[f64; 3]> {
    let tris: Vec<[usize; 3]> = incident.iter().map(|&f| faces[f]).collect();
    area_weighted_normal(&tris, pos)
}

/// Normalized sum of (unnormalized) face normals; `None` when it vanishes.
pub fn area_weighted_normal<T: Real>(tris: &[[usize; 3]], pos: impl Fn(usize) -> Vec3<T>) -> Option<Vec3<T>> {
    let mut acc = [T::zero(); 3];
    for f in tris {
        let (a, b, c) = (pos(f[0]), pos(f[1]), pos(f[2]));
        let n = cross(sub(b, a), sub(c, a));
        acc = add(acc, n);
    }
    let len2 = dot(acc, acc);
    if !(len2.value() > 1e-300) {
        return None;
    }
    let inv = T::cst(1.0) / len2.sqrt();
    Some([acc[0] * inv, acc[1] * inv, acc[2] * inv])
}

fn topological_order(parents: &[Option<usize>]) -> Result<Vec<usize>, BodyModelError> {
    let n = parents.len();
    if parents.iter().filter(|p| p.is_none()).count() != 1 {
        return Err(BodyModelError::Invalid("parent array must have exactly one root".into()));
    }
    if let Some(p) = parents.iter().flatten().find(|&&p| p >= n) {
        return Err(BodyModelError::Invalid(format!("parent index {p} out of range")));
    }
    let mut order = Vec::with_capacity(n);
    let mut placed = vec![false; n];
    while order.len() < n {
        let before = order.len();
        for j in 0..n {
            if !placed[j] && parents[j].map_or(true, |p| placed[p]) {
                placed[j] = true;
                order.push(j);
            }
        }
        if order.len() == before {
            return Err(BodyModelError::Invalid("parent array contains a cycle".into()));
        }
    }
    Ok(order)
}

pub fn identity<T: Real>() -> Mat3<T> {
    let (o, z) = (T::cst(1.0), T::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

/// Rotation matrix of a rotation vector; a second-order expansion near zero
/// keeps the derivative exact at the origin.
pub fn rodrigues<T: Real>(w: Vec3<T>) -> Mat3<T> {
    let theta2 = dot(w, w);
    let k = [[T::zero(), -w[2], w[1]], [w[2], T::zero(), -w[0]], [-w[1], w[0], T::zero()]];
    let k2 = mat_mul(&k, &k);
    let (a, b) = if theta2.value() < 1e-12 {
        (T::cst(1.0) - theta2.scale(1.0 / 6.0), T::cst(0.5) - theta2.scale(1.0 / 24.0))
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (T::cst(1.0) - theta.cos()) / theta2)
    };
    let mut r = identity::<T>();
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = r[i][j] + a * k[i][j] + b * k2[i][j];
        }
    }
    r
}

#[inline]
pub fn add<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn dot<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn mat_vec<T: Real>(m: &Mat3<T>, v: Vec3<T>) -> Vec3<T> {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn mat_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{rotation_vector_to_matrix, RotationMatrix};

    /// Two joints at the origin; vertex 0 bound to the root, vertex 1 to the child.
    fn chain() -> BodyModel {
        BodyModel::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
            vec![0.0; 9],
            1,
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            vec![None, Some(0)],
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0],
            vec![[0, 1, 2]],
            vec!["root".into(), "child".into()],
        )
        .unwrap()
    }

    /// Unit cube, z up, with the top face fanned around a center vertex (index 8).
    pub(crate) fn cube() -> BodyModel {
        let mut verts = vec![];
        for &z in &[0.0, 1.0] {
            for &(x, y) in &[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)] {
                verts.push([x, y, z]);
            }
        }
        verts.push([0.5, 0.5, 1.0]);
        let faces = vec![
            // bottom (outward -z)
            [0, 2, 1],
            [0, 3, 2],
            // top fan (outward +z)
            [4, 5, 8],
            [5, 6, 8],
            [6, 7, 8],
            [7, 4, 8],
            // sides
            [0, 1, 5],
            [0, 5, 4],
            [1, 2, 6],
            [1, 6, 5],
            [2, 3, 7],
            [2, 7, 6],
            [3, 0, 4],
            [3, 4, 7],
        ];
        let n = verts.len();
        let mut reg = vec![0.0; n];
        reg[0] = 1.0;
        BodyModel::new(verts, vec![], 0, reg, vec![None], vec![1.0; n], faces, vec!["root".into()]).unwrap()
    }

    #[test]
    fn rest_pose_is_template() {
        let m = chain();
        let v = m.skin(&ShapePose::rest(&m)).unwrap();
        assert_eq!(v, m.template);
    }

    #[test]
    fn translation_moves_every_vertex() {
        let m = chain();
        let mut sp = ShapePose::rest(&m);
        sp.gamma = [1.0, 2.0, 3.0];
        let v = m.skin(&sp).unwrap();
        for (a, b) in v.iter().zip(&m.template) {
            assert_eq!(*a, [b[0] + 1.0, b[1] + 2.0, b[2] + 3.0]);
        }
    }

    #[test]
    fn child_quarter_turn() {
        let m = chain();
        let mut sp = ShapePose::rest(&m);
        sp.theta[1] = [0.0, 0.0, std::f64::consts::FRAC_PI_2];
        let v = m.skin(&sp).unwrap();
        let expected = [0.0, 1.0, 0.0];
        for c in 0..3 {
            assert!((v[1][c] - expected[c]).abs() < 1e-15);
        }
        assert_eq!(v[0], [0.0, 0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_errors() {
        let m = chain();
        let mut sp = ShapePose::rest(&m);
        sp.theta.pop();
        assert!(matches!(m.skin(&sp), Err(BodyModelError::Dimension(_))));
    }

    #[test]
    fn invalid_models_rejected() {
        let bad_skin = BodyModel::new(
            vec![[0.0; 3]],
            vec![],
            0,
            vec![1.0],
            vec![None],
            vec![0.5],
            vec![],
            vec!["r".into()],
        );
        assert!(matches!(bad_skin, Err(BodyModelError::Invalid(_))));
        let cyclic = topological_order(&[None, Some(2), Some(1)]);
        assert!(cyclic.is_err());
        assert!(topological_order(&[None, None]).is_err());
    }

    #[test]
    fn cube_top_center_normal() {
        let m = cube();
        let n = m.vertex_normals(&ShapePose::rest(&m)).unwrap();
        assert_eq!(n.normals[8], [0.0, 0.0, 1.0]);
        assert!(n.isolated.is_empty());
        for v in &n.normals {
            assert!(((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn tetrahedron_vertex_normal() {
        let s = 1.0 / 2f64.sqrt();
        let verts = vec![[1.0, 0.0, -s], [-1.0, 0.0, -s], [0.0, 1.0, s], [0.0, -1.0, s]];
        let faces = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
        let m = BodyModel::new(verts.clone(), vec![], 0, vec![0.25; 4], vec![None], vec![1.0; 4], faces.clone(), vec!["r".into()])
            .unwrap();
        let n = m.vertex_normals(&ShapePose::rest(&m)).unwrap();
        // Hand oracle: unit face normals of the three faces at vertex 0, summed.
        let unit = |f: [usize; 3]| {
            let c = cross(sub(verts[f[1]], verts[f[0]]), sub(verts[f[2]], verts[f[0]]));
            let l = dot(c, c).sqrt();
            [c[0] / l, c[1] / l, c[2] / l]
        };
        let sum = add(add(unit(faces[0]), unit(faces[1])), unit(faces[2]));
        let l = dot(sum, sum).sqrt();
        for c in 0..3 {
            assert!((n.normals[0][c] - sum[c] / l).abs() < 1e-12);
        }
        // Vertex 0 of a regular tetrahedron points away from the centroid.
        assert!((n.normals[0][0] - 2.0 / 6f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn isolated_vertex_flagged() {
        let m = BodyModel::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0, 5.0, 5.0]],
            vec![],
            0,
            vec![0.25; 4],
            vec![None],
            vec![1.0; 4],
            vec![[0, 1, 2]],
            vec!["r".into()],
        )
        .unwrap();
        let n = m.vertex_normals(&ShapePose::rest(&m)).unwrap();
        assert_eq!(n.isolated, vec![3]);
        assert_eq!(n.normals[3], [0.0; 3]);
    }

    #[test]
    fn markers_follow_normals() {
        let m = cube();
        let sp = ShapePose::rest(&m);
        let layout = MarkerLayout { names: vec!["top".into()], marker_vertex: vec![8], offsets: vec![0.0] };
        assert_eq!(m.simulate_markers(&layout, &sp).unwrap(), vec![[0.5, 0.5, 1.0]]);
        let layout = MarkerLayout { offsets: vec![0.01], ..layout };
        let mk = m.simulate_markers(&layout, &sp).unwrap();
        assert_eq!(mk, vec![[0.5, 0.5, 1.01]]);
        let bad = MarkerLayout { marker_vertex: vec![99], ..layout };
        assert!(matches!(m.simulate_markers(&bad, &sp), Err(BodyModelError::Layout(_))));
    }

    #[test]
    fn rodrigues_matches_reference() {
        for w in [[0.3, -0.2, 0.5], [1e-8, 0.0, 2e-8], [0.0, 0.0, 3.0]] {
            let r = rodrigues(w);
            let reference = rotation_vector_to_matrix(w);
            for i in 0..3 {
                for j in 0..3 {
                    assert!((r[i][j] - reference.0[(i, j)]).abs() < 1e-14);
                }
            }
        }
        let r: Mat3<f64> = rodrigues([0.0; 3]);
        assert_eq!(RotationMatrix(nalgebra::Matrix3::from_fn(|i, j| r[i][j])), RotationMatrix::identity());
    }
}
