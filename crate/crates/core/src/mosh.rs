//! Marker-based body fitting.
//!
//! The objective is a weighted sum of six energies over shape `β`, per-marker
//! normal offsets `d`, and per-frame pose `θ_t` and translation `γ_t`:
//!
//! * data: `Σ_visible ‖m̃ − m‖²`, with latent markers `m̃ = S_H + d·N_H`
//! * surface: `Σ_k (r_k − d⁰_k)²`, `r_k` the realized offset along the rest normal
//! * init: `Σ_k ‖m̃_k − v_k(β)‖²` over markers seen in at least one frame,
//!   latent markers taken in the rest pose
//! * shape / pose: quadratic priors `(x − μ)ᵀ Σ⁻¹ (x − μ)`
//! * velocity: `Σ_t ‖θ_t − 2θ_{t−1} + θ_{t−2}‖²`
//!
//! Fitting runs in two stages. Stage 1 jointly solves `(β, d, θ, γ)` on a
//! handful of frames, stage 2 freezes `(β, d)` and solves each frame in order,
//! warm-started from the previous one.

use crate::autodiff::{gradient, with_tape, Real, Var};
use crate::body_model::{BodyModel, BodyModelError, MarkerLayout, MarkerStencil, ShapePose, Vec3};
use crate::container::{Container, ContainerError};
use crate::optim::{minimize, BfgsOptions};
use crate::rotation::{matrix_to_rotation_vector, RotationMatrix};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MoshError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value in {term} term")]
    NonFinite { term: &'static str },
    #[error("marker csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Model(#[from] BodyModelError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitWeights {
    pub data: f64,
    pub surface: f64,
    pub init: f64,
    pub beta: f64,
    pub theta: f64,
    pub velocity: f64,
}

impl Default for FitWeights {
    fn default() -> Self {
        FitWeights { data: 400.0, surface: 100.0, init: 1.0, beta: 1.0, theta: 1.0, velocity: 10.0 }
    }
}

impl FitWeights {
    pub fn zero() -> Self {
        FitWeights { data: 0.0, surface: 0.0, init: 0.0, beta: 0.0, theta: 0.0, velocity: 0.0 }
    }

    /// Weight 1 on `term`, 0 elsewhere.
    pub fn only(term: Term) -> Self {
        let mut w = FitWeights::zero();
        *w.get_mut(term) = 1.0;
        w
    }

    pub fn get(&self, term: Term) -> f64 {
        match term {
            Term::Data => self.data,
            Term::Surface => self.surface,
            Term::Init => self.init,
            Term::Shape => self.beta,
            Term::Pose => self.theta,
            Term::Velocity => self.velocity,
        }
    }

    fn get_mut(&mut self, term: Term) -> &mut f64 {
        match term {
            Term::Data => &mut self.data,
            Term::Surface => &mut self.surface,
            Term::Init => &mut self.init,
            Term::Shape => &mut self.beta,
            Term::Pose => &mut self.theta,
            Term::Velocity => &mut self.velocity,
        }
    }

    pub fn validate(&self) -> Result<(), MoshError> {
        for t in Term::ALL {
            let w = self.get(t);
            if !(w >= 0.0 && w.is_finite()) {
                return Err(MoshError::Config(format!("{} weight must be finite and nonnegative, got {w}", t.name())));
            }
        }
        Ok(())
    }

    /// Solving additionally needs a positive data weight.
    pub fn validate_for_fit(&self) -> Result<(), MoshError> {
        self.validate()?;
        if self.data <= 0.0 {
            return Err(MoshError::Config("data weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    Data,
    Surface,
    Init,
    Shape,
    Pose,
    Velocity,
}

impl Term {
    pub const ALL: [Term; 6] = [Term::Data, Term::Surface, Term::Init, Term::Shape, Term::Pose, Term::Velocity];

    pub fn name(self) -> &'static str {
        match self {
            Term::Data => "data",
            Term::Surface => "surface",
            Term::Init => "init",
            Term::Shape => "shape",
            Term::Pose => "pose",
            Term::Velocity => "velocity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Precision {
    Diagonal(Vec<f64>),
    /// Row-major `dim × dim`.
    Dense { dim: usize, values: Vec<f64> },
}

impl Precision {
    pub fn dim(&self) -> usize {
        match self {
            Precision::Diagonal(d) => d.len(),
            Precision::Dense { dim, .. } => *dim,
        }
    }

    pub fn quadratic<T: Real>(&self, dev: &[T]) -> T {
        let mut acc = T::zero();
        match self {
            Precision::Diagonal(d) => {
                for (x, &p) in dev.iter().zip(d) {
                    if p != 0.0 {
                        acc = acc + (*x * *x).scale(p);
                    }
                }
            }
            Precision::Dense { dim, values } => {
                for i in 0..*dim {
                    let mut row = T::zero();
                    for j in 0..*dim {
                        let p = values[i * dim + j];
                        if p != 0.0 {
                            row = row + dev[j].scale(p);
                        }
                    }
                    acc = acc + dev[i] * row;
                }
            }
        }
        acc
    }

    pub fn validate(&self, what: &str) -> Result<(), MoshError> {
        match self {
            Precision::Diagonal(d) => {
                if d.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                    return Err(MoshError::Config(format!("{what} precision has a negative or non-finite entry")));
                }
            }
            Precision::Dense { dim, values } => {
                if values.len() != dim * dim || values.iter().any(|v| !v.is_finite()) {
                    return Err(MoshError::Config(format!("{what} precision is malformed")));
                }
                let m = nalgebra::DMatrix::from_row_slice(*dim, *dim, values);
                if (&m - m.transpose()).amax() > 1e-9 * m.amax().max(1.0) {
                    return Err(MoshError::Config(format!("{what} precision is not symmetric")));
                }
                let min_eig = m.symmetric_eigenvalues().min();
                if min_eig < -1e-9 * m.amax().max(1.0) {
                    return Err(MoshError::Config(format!("{what} precision is not positive semidefinite")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosePrior {
    /// `J × 3`, flattened.
    pub mu_theta: Vec<f64>,
    pub theta_precision: Precision,
    pub mu_beta: Vec<f64>,
    pub beta_precision: Precision,
}

impl PosePrior {
    /// Zero-mean prior with isotropic precisions; the root joint (index 0) is left free.
    pub fn isotropic(num_joints: usize, num_betas: usize, theta_precision: f64, beta_precision: f64) -> Self {
        let mut diag = vec![theta_precision; num_joints * 3];
        diag[..3].fill(0.0);
        PosePrior {
            mu_theta: vec![0.0; num_joints * 3],
            theta_precision: Precision::Diagonal(diag),
            mu_beta: vec![0.0; num_betas],
            beta_precision: Precision::Diagonal(vec![beta_precision; num_betas]),
        }
    }

    pub fn validate(&self, model: &BodyModel) -> Result<(), MoshError> {
        let (j3, b) = (model.num_joints() * 3, model.num_betas);
        if self.mu_theta.len() != j3 || self.theta_precision.dim() != j3 {
            return Err(MoshError::Dimension(format!("pose prior must have dimension {j3}")));
        }
        if self.mu_beta.len() != b || self.beta_precision.dim() != b {
            return Err(MoshError::Dimension(format!("shape prior must have dimension {b}")));
        }
        self.theta_precision.validate("pose")?;
        self.beta_precision.validate("shape")
    }
}

/// Observed markers, `T × K`, in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerSequence {
    pub positions: Vec<Vec<[f64; 3]>>,
    pub visible: Vec<Vec<bool>>,
}

impl MarkerSequence {
    pub fn new(positions: Vec<Vec<[f64; 3]>>) -> Self {
        let visible = positions.iter().map(|f| vec![true; f.len()]).collect();
        MarkerSequence { positions, visible }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self, num_markers: usize) -> Result<(), MoshError> {
        if self.visible.len() != self.positions.len() {
            return Err(MoshError::Dimension("visibility and position frame counts differ".into()));
        }
        for (t, (p, v)) in self.positions.iter().zip(&self.visible).enumerate() {
            if p.len() != num_markers || v.len() != num_markers {
                return Err(MoshError::Dimension(format!("frame {t} has {} markers, layout has {num_markers}", p.len())));
            }
            if p.iter().zip(v).any(|(x, &vis)| vis && x.iter().any(|c| !c.is_finite())) {
                return Err(MoshError::Dimension(format!("frame {t} has a non-finite visible marker")));
            }
        }
        Ok(())
    }

    /// Reads `frame,marker_name,x,y,z,visible` rows; markers absent from a
    /// frame are treated as occluded.
    pub fn read_csv(path: &Path, layout: &MarkerLayout) -> Result<Self, MoshError> {
        let index: HashMap<&str, usize> = layout.names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut rdr = csv::Reader::from_path(path).map_err(|e| MoshError::Csv(e.to_string()))?;
        let mut positions: Vec<Vec<[f64; 3]>> = Vec::new();
        let mut visible: Vec<Vec<bool>> = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| MoshError::Csv(e.to_string()))?;
            let line = row + 2;
            if rec.len() != 6 {
                return Err(MoshError::Csv(format!("line {line}: expected 6 columns, found {}", rec.len())));
            }
            let num = |i: usize| -> Result<f64, MoshError> {
                rec[i].trim().parse().map_err(|_| MoshError::Csv(format!("line {line}: invalid number '{}'", &rec[i])))
            };
            let frame: usize =
                rec[0].trim().parse().map_err(|_| MoshError::Csv(format!("line {line}: invalid frame '{}'", &rec[0])))?;
            let k = *index
                .get(rec[1].trim())
                .ok_or_else(|| MoshError::Csv(format!("line {line}: unknown marker '{}'", &rec[1])))?;
            let vis = match rec[5].trim() {
                "1" | "true" | "True" => true,
                "0" | "false" | "False" => false,
                other => return Err(MoshError::Csv(format!("line {line}: invalid visibility '{other}'"))),
            };
            while positions.len() <= frame {
                positions.push(vec![[0.0; 3]; layout.len()]);
                visible.push(vec![false; layout.len()]);
            }
            positions[frame][k] = [num(2)?, num(3)?, num(4)?];
            visible[frame][k] = vis;
        }
        let seq = MarkerSequence { positions, visible };
        seq.validate(layout.len())?;
        Ok(seq)
    }

    pub fn write_csv(&self, path: &Path, layout: &MarkerLayout) -> Result<(), MoshError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| MoshError::Csv(e.to_string()))?;
        let csv_err = |e: csv::Error| MoshError::Csv(e.to_string());
        w.write_record(["frame", "marker_name", "x", "y", "z", "visible"]).map_err(csv_err)?;
        for (t, (frame, vis)) in self.positions.iter().zip(&self.visible).enumerate() {
            for (k, p) in frame.iter().enumerate() {
                w.write_record([
                    t.to_string(),
                    layout.names[k].clone(),
                    format!("{}", p[0]),
                    format!("{}", p[1]),
                    format!("{}", p[2]),
                    if vis[k] { "1".into() } else { "0".into() },
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Model, prescribed layout and the evaluation stencil shared by every term.
#[derive(Debug, Clone)]
pub struct FitContext<'a> {
    pub model: &'a BodyModel,
    pub layout: &'a MarkerLayout,
    stencil: MarkerStencil,
}

impl<'a> FitContext<'a> {
    pub fn new(model: &'a BodyModel, layout: &'a MarkerLayout) -> Result<Self, MoshError> {
        layout.validate(model)?;
        Ok(FitContext { model, layout, stencil: MarkerStencil::new(model, layout) })
    }

    pub fn markers<T: Real>(&self, offsets: &[T], beta: &[T], theta: &[Vec3<T>], gamma: Vec3<T>) -> Vec<Vec3<T>> {
        self.stencil.markers(self.model, offsets, beta, theta, gamma)
    }

    /// Rest-pose surface points and normals under the markers.
    fn rest_surface<T: Real>(&self, beta: &[T]) -> (Vec<Vec3<T>>, Vec<Vec3<T>>) {
        let theta = vec![[T::zero(); 3]; self.model.num_joints()];
        self.stencil.surface(self.model, beta, &theta, [T::zero(); 3])
    }
}

pub fn data_term<T: Real>(
    ctx: &FitContext,
    offsets: &[T],
    beta: &[T],
    theta: &[Vec3<T>],
    gamma: Vec3<T>,
    observed: &[[f64; 3]],
    visible: &[bool],
) -> T {
    if !visible.iter().any(|&v| v) {
        return T::zero();
    }
    let sim = ctx.markers(offsets, beta, theta, gamma);
    let mut acc = T::zero();
    for ((m, o), &vis) in sim.iter().zip(observed).zip(visible) {
        if vis {
            for c in 0..3 {
                let r = m[c] - T::cst(o[c]);
                acc = acc + r * r;
            }
        }
    }
    acc
}

pub fn surface_term<T: Real>(ctx: &FitContext, offsets: &[T], beta: &[T]) -> T {
    let (points, normals) = ctx.rest_surface(beta);
    let mut acc = T::zero();
    for k in 0..points.len() {
        let (p, n, d) = (points[k], normals[k], offsets[k]);
        let marker = [p[0] + d * n[0], p[1] + d * n[1], p[2] + d * n[2]];
        let realized = (marker[0] - p[0]) * n[0] + (marker[1] - p[1]) * n[1] + (marker[2] - p[2]) * n[2];
        let r = realized - T::cst(ctx.layout.offsets[k]);
        acc = acc + r * r;
    }
    acc
}

/// `active[k]` marks markers observed in at least one frame.
pub fn init_term<T: Real>(ctx: &FitContext, offsets: &[T], beta: &[T], active: &[bool]) -> T {
    let (points, normals) = ctx.rest_surface(beta);
    let mut acc = T::zero();
    for k in 0..points.len() {
        if !active[k] {
            continue;
        }
        for c in 0..3 {
            let marker = points[k][c] + offsets[k] * normals[k][c];
            let r = marker - points[k][c];
            acc = acc + r * r;
        }
    }
    acc
}

pub fn shape_prior<T: Real>(prior: &PosePrior, beta: &[T]) -> T {
    let dev: Vec<T> = beta.iter().zip(&prior.mu_beta).map(|(b, m)| *b - T::cst(*m)).collect();
    prior.beta_precision.quadratic(&dev)
}

pub fn pose_prior<T: Real>(prior: &PosePrior, theta: &[Vec3<T>]) -> T {
    let dev: Vec<T> = theta.iter().flatten().zip(&prior.mu_theta).map(|(t, m)| *t - T::cst(*m)).collect();
    prior.theta_precision.quadratic(&dev)
}

/// Second-difference energy over a contiguous run of poses.
pub fn velocity_term<T: Real>(poses: &[&[Vec3<T>]]) -> T {
    let mut acc = T::zero();
    for w in poses.windows(3) {
        for ((a, b), c) in w[2].iter().zip(w[1]).zip(w[0]) {
            for i in 0..3 {
                let r = a[i] - b[i].scale(2.0) + c[i];
                acc = acc + r * r;
            }
        }
    }
    acc
}

/// Free parameters of a joint solve over the frames of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FitParams {
    pub beta: Vec<f64>,
    pub offsets: Vec<f64>,
    pub theta: Vec<Vec<[f64; 3]>>,
    pub gamma: Vec<[f64; 3]>,
}

impl FitParams {
    pub fn flatten(&self) -> Vec<f64> {
        let mut x = self.beta.clone();
        x.extend(&self.offsets);
        for (th, g) in self.theta.iter().zip(&self.gamma) {
            x.extend(th.iter().flatten());
            x.extend(g);
        }
        x
    }

    pub fn unflatten(&self, x: &[f64]) -> FitParams {
        let (b, k) = (self.beta.len(), self.offsets.len());
        let j = self.theta.first().map_or(0, |t| t.len());
        let mut out = self.clone();
        out.beta.copy_from_slice(&x[..b]);
        out.offsets.copy_from_slice(&x[b..b + k]);
        let mut at = b + k;
        for f in 0..self.theta.len() {
            for ji in 0..j {
                out.theta[f][ji] = [x[at], x[at + 1], x[at + 2]];
                at += 3;
            }
            out.gamma[f] = [x[at], x[at + 1], x[at + 2]];
            at += 3;
        }
        out
    }
}

/// Per-term values of an objective evaluation (unweighted).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TermValues {
    pub data: f64,
    pub surface: f64,
    pub init: f64,
    pub shape: f64,
    pub pose: f64,
    pub velocity: f64,
}

impl TermValues {
    pub fn get(&self, term: Term) -> f64 {
        match term {
            Term::Data => self.data,
            Term::Surface => self.surface,
            Term::Init => self.init,
            Term::Shape => self.shape,
            Term::Pose => self.pose,
            Term::Velocity => self.velocity,
        }
    }

    pub fn weighted(&self, w: &FitWeights) -> f64 {
        Term::ALL.iter().map(|&t| w.get(t) * self.get(t)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub terms: TermValues,
    pub gradient: FitParams,
}

/// Joint objective of `frames` (indices into `seq`) with `params.theta[i]`
/// belonging to `frames[i]`. The velocity term applies to runs of consecutive
/// frame indices.
struct JointProblem<'a, 'b> {
    ctx: &'a FitContext<'b>,
    seq: &'a MarkerSequence,
    frames: Vec<usize>,
    prior: &'a PosePrior,
    weights: FitWeights,
    active: Vec<bool>,
    num_betas: usize,
    num_markers: usize,
    num_joints: usize,
}

impl JointProblem<'_, '_> {
    fn terms<T: Real>(&self, x: &[T]) -> [T; 6] {
        let (b, k, j) = (self.num_betas, self.num_markers, self.num_joints);
        let beta = &x[..b];
        let offsets = &x[b..b + k];
        let stride = j * 3 + 3;
        let frame_params = |i: usize| {
            let base = b + k + i * stride;
            let theta: Vec<Vec3<T>> = (0..j).map(|ji| [x[base + ji * 3], x[base + ji * 3 + 1], x[base + ji * 3 + 2]]).collect();
            let g = base + j * 3;
            (theta, [x[g], x[g + 1], x[g + 2]])
        };
        let w = &self.weights;
        let mut out = [T::zero(); 6];
        let mut thetas = Vec::with_capacity(self.frames.len());
        for (i, &f) in self.frames.iter().enumerate() {
            let (theta, gamma) = frame_params(i);
            if w.data != 0.0 {
                out[0] = out[0] + data_term(self.ctx, offsets, beta, &theta, gamma, &self.seq.positions[f], &self.seq.visible[f]);
            }
            if w.theta != 0.0 {
                out[4] = out[4] + pose_prior(self.prior, &theta);
            }
            thetas.push(theta);
        }
        if w.surface != 0.0 {
            out[1] = surface_term(self.ctx, offsets, beta);
        }
        if w.init != 0.0 {
            out[2] = init_term(self.ctx, offsets, beta, &self.active);
        }
        if w.beta != 0.0 {
            out[3] = shape_prior(self.prior, beta);
        }
        if w.velocity != 0.0 {
            let mut start = 0;
            for i in 1..=self.frames.len() {
                if i == self.frames.len() || self.frames[i] != self.frames[i - 1] + 1 {
                    let run: Vec<&[Vec3<T>]> = thetas[start..i].iter().map(|t| t.as_slice()).collect();
                    out[5] = out[5] + velocity_term(&run);
                    start = i;
                }
            }
        }
        out
    }

    fn value(&self, x: &[f64]) -> f64 {
        weighted_sum(&self.terms(x), &self.weights)
    }

    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        with_tape(|| {
            let vars: Vec<Var> = x.iter().map(|&v| Var::input(v)).collect();
            let t = self.terms(&vars);
            let total = Term::ALL.iter().enumerate().fold(Var::cst(0.0), |acc, (i, term)| {
                let w = self.weights.get(*term);
                if w == 0.0 {
                    acc
                } else {
                    acc + t[i].scale(w)
                }
            });
            (total.value(), gradient(total, &vars))
        })
    }
}

fn weighted_sum<T: Real>(t: &[T; 6], w: &FitWeights) -> f64 {
    Term::ALL.iter().enumerate().map(|(i, term)| if w.get(*term) == 0.0 { 0.0 } else { w.get(*term) * t[i].value() }).sum()
}

fn active_markers(seq: &MarkerSequence, k: usize) -> Vec<bool> {
    (0..k).map(|i| seq.visible.iter().any(|v| v[i])).collect()
}

/// Weighted objective over every frame of `seq` and its gradient with respect
/// to all parameters.
pub fn total_objective(
    ctx: &FitContext,
    seq: &MarkerSequence,
    params: &FitParams,
    weights: &FitWeights,
    prior: &PosePrior,
) -> Result<Objective, MoshError> {
    weights.validate()?;
    check_params(ctx, seq, params)?;
    let problem = JointProblem {
        ctx,
        seq,
        frames: (0..seq.len()).collect(),
        prior,
        weights: *weights,
        active: active_markers(seq, ctx.layout.len()),
        num_betas: ctx.model.num_betas,
        num_markers: ctx.layout.len(),
        num_joints: ctx.model.num_joints(),
    };
    let x = params.flatten();
    let t = problem.terms(&x);
    let terms = TermValues { data: t[0], surface: t[1], init: t[2], shape: t[3], pose: t[4], velocity: t[5] };
    for term in Term::ALL {
        if !terms.get(term).is_finite() {
            return Err(MoshError::NonFinite { term: term.name() });
        }
    }
    let (value, g) = problem.value_grad(&x);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(MoshError::NonFinite { term: "gradient" });
    }
    Ok(Objective { value, terms, gradient: params.unflatten(&g) })
}

fn check_params(ctx: &FitContext, seq: &MarkerSequence, p: &FitParams) -> Result<(), MoshError> {
    seq.validate(ctx.layout.len())?;
    let j = ctx.model.num_joints();
    if p.beta.len() != ctx.model.num_betas
        || p.offsets.len() != ctx.layout.len()
        || p.theta.len() != seq.len()
        || p.gamma.len() != seq.len()
        || p.theta.iter().any(|t| t.len() != j)
    {
        return Err(MoshError::Dimension("parameters do not match model, layout and sequence".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameSelection {
    Uniform,
    PoseSpread,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub weights: FitWeights,
    pub prior: PosePrior,
    pub solver: BfgsOptions,
    pub stage1_frames: usize,
    pub selection: FrameSelection,
}

impl FitConfig {
    pub fn new(prior: PosePrior) -> Self {
        FitConfig {
            weights: FitWeights::default(),
            prior,
            solver: BfgsOptions::default(),
            stage1_frames: 12,
            selection: FrameSelection::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta: Vec<f64>,
    pub offsets: Vec<f64>,
    pub theta: Vec<Vec<[f64; 3]>>,
    pub gamma: Vec<[f64; 3]>,
    pub selected_frames: Vec<usize>,
    pub stage1_converged: bool,
    pub frame_converged: Vec<bool>,
    pub converged: bool,
    pub marker_rms: f64,
}

impl FitResult {
    pub fn shape_pose(&self, t: usize) -> ShapePose {
        ShapePose { beta: self.beta.clone(), theta: self.theta[t].clone(), gamma: self.gamma[t] }
    }

    /// Writes `<stem>.json` (shape, offsets, convergence) and the
    /// `<stem>_poses.json/.bin` pose track.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<(), MoshError> {
        let t = self.theta.len();
        let j = self.theta.first().map_or(0, |x| x.len());
        let mut track = Container::new("pose_track").with_meta(json!({ "frames": t, "joints": j }));
        track.push("theta", &[t, j, 3], self.theta.iter().flatten().flatten().copied().collect())?;
        track.push("gamma", &[t, 3], self.gamma.iter().flatten().copied().collect())?;
        let track_name = format!("{stem}_poses.json");
        track.write(&dir.join(&track_name))?;
        let summary = json!({
            "beta": self.beta,
            "offsets": self.offsets,
            "selected_frames": self.selected_frames,
            "stage1_converged": self.stage1_converged,
            "frame_converged": self.frame_converged,
            "converged": self.converged,
            "marker_rms": self.marker_rms,
            "pose_track": track_name,
        });
        let mut text = serde_json::to_string_pretty(&summary)?;
        text.push('\n');
        std::fs::write(dir.join(format!("{stem}.json")), text)?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self, MoshError> {
        #[derive(Deserialize)]
        struct Summary {
            beta: Vec<f64>,
            offsets: Vec<f64>,
            selected_frames: Vec<usize>,
            stage1_converged: bool,
            frame_converged: Vec<bool>,
            converged: bool,
            marker_rms: f64,
            pose_track: String,
        }
        let s: Summary = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let track = Container::read(&dir.join(&s.pose_track))?;
        track.expect_kind("pose_track")?;
        let (shape, theta) = track.array_shaped("theta", &[None, None, Some(3)])?;
        let (t, j) = (shape[0], shape[1]);
        let (_, gamma) = track.array_shaped("gamma", &[Some(t), Some(3)])?;
        let theta = theta.chunks_exact(j * 3).map(|f| f.chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect()).collect();
        let gamma = gamma.chunks_exact(3).map(|g| [g[0], g[1], g[2]]).collect();
        Ok(FitResult {
            beta: s.beta,
            offsets: s.offsets,
            theta,
            gamma,
            selected_frames: s.selected_frames,
            stage1_converged: s.stage1_converged,
            frame_converged: s.frame_converged,
            converged: s.converged,
            marker_rms: s.marker_rms,
        })
    }
}

/// `count` frame indices spread uniformly over `0..len` (all frames when fewer).
pub fn uniform_frames(len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    if count <= 1 {
        return vec![0];
    }
    let mut out: Vec<usize> = (0..count).map(|i| ((i * (len - 1)) as f64 / (count - 1) as f64).round() as usize).collect();
    out.dedup();
    out
}

/// Greedy farthest-point selection on root-centered marker configurations.
pub fn pose_spread_frames(seq: &MarkerSequence, count: usize) -> Vec<usize> {
    let len = seq.len();
    if len <= count {
        return (0..len).collect();
    }
    let centered: Vec<Vec<[f64; 3]>> = seq
        .positions
        .iter()
        .zip(&seq.visible)
        .map(|(p, v)| {
            let c = centroid(p, v);
            p.iter().map(|x| [x[0] - c[0], x[1] - c[1], x[2] - c[2]]).collect()
        })
        .collect();
    let dist = |a: usize, b: usize| {
        let (mut s, mut n) = (0.0, 0usize);
        for k in 0..centered[a].len() {
            if seq.visible[a][k] && seq.visible[b][k] {
                s += (0..3).map(|c| (centered[a][k][c] - centered[b][k][c]).powi(2)).sum::<f64>();
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    };
    let mut chosen = vec![0];
    let mut nearest: Vec<f64> = (0..len).map(|t| dist(0, t)).collect();
    while chosen.len() < count {
        let next = (0..len)
            .filter(|t| !chosen.contains(t))
            .max_by(|&a, &b| nearest[a].total_cmp(&nearest[b]).then(b.cmp(&a)))
            .expect("frames remain");
        chosen.push(next);
        for t in 0..len {
            nearest[t] = nearest[t].min(dist(next, t));
        }
    }
    chosen.sort_unstable();
    chosen
}

fn centroid(points: &[[f64; 3]], visible: &[bool]) -> [f64; 3] {
    let mut c = [0.0; 3];
    let mut n = 0.0;
    for (p, &v) in points.iter().zip(visible) {
        if v {
            for i in 0..3 {
                c[i] += p[i];
            }
            n += 1.0;
        }
    }
    if n > 0.0 {
        c.iter_mut().for_each(|x| *x /= n);
    }
    c
}

/// Root rotation and translation aligning rest-pose markers to a frame (Kabsch).
fn rigid_init(ctx: &FitContext, rest_markers: &[[f64; 3]], root: [f64; 3], observed: &[[f64; 3]], visible: &[bool]) -> ([f64; 3], [f64; 3]) {
    let n = visible.iter().filter(|&&v| v).count();
    if n == 0 {
        return ([0.0; 3], [0.0; 3]);
    }
    let cr = centroid(rest_markers, visible);
    let co = centroid(observed, visible);
    let mut rot = Matrix3::identity();
    if n >= 3 {
        let mut h = Matrix3::zeros();
        for k in 0..ctx.layout.len() {
            if visible[k] {
                let a = Vector3::new(rest_markers[k][0] - cr[0], rest_markers[k][1] - cr[1], rest_markers[k][2] - cr[2]);
                let b = Vector3::new(observed[k][0] - co[0], observed[k][1] - co[1], observed[k][2] - co[2]);
                h += a * b.transpose();
            }
        }
        let svd = h.svd(true, true);
        if let (Some(u), Some(vt)) = (svd.u, svd.v_t) {
            let v = vt.transpose();
            let sign = (v * u.transpose()).determinant().signum();
            let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign));
            rot = v * d * u.transpose();
        }
    }
    // observed ≈ R (x − root) + root + γ
    let r = RotationMatrix(rot);
    let rc = r.rotate([cr[0] - root[0], cr[1] - root[1], cr[2] - root[2]]);
    let gamma = [co[0] - rc[0] - root[0], co[1] - rc[1] - root[1], co[2] - rc[2] - root[2]];
    (matrix_to_rotation_vector(&r), gamma)
}

pub fn fit_sequence(model: &BodyModel, layout: &MarkerLayout, seq: &MarkerSequence, config: &FitConfig) -> Result<FitResult, MoshError> {
    config.weights.validate_for_fit()?;
    config.prior.validate(model)?;
    if config.stage1_frames == 0 {
        return Err(MoshError::Config("stage-1 frame count must be positive".into()));
    }
    if seq.is_empty() {
        return Err(MoshError::Dimension("marker sequence is empty".into()));
    }
    let ctx = FitContext::new(model, layout)?;
    seq.validate(layout.len())?;
    let (j, b, k) = (model.num_joints(), model.num_betas, layout.len());

    let frames = match config.selection {
        FrameSelection::Uniform => uniform_frames(seq.len(), config.stage1_frames),
        FrameSelection::PoseSpread => pose_spread_frames(seq, config.stage1_frames),
    };
    let mean_theta: Vec<[f64; 3]> = config.prior.mu_theta.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let beta0 = config.prior.mu_beta.clone();
    let root = model.pose_joints(&beta0, &vec![[0.0; 3]; j]).rest[0];
    let rest_markers = ctx.markers(&layout.offsets, &beta0, &mean_theta, [0.0; 3]);
    let mut init = FitParams { beta: beta0.clone(), offsets: layout.offsets.clone(), theta: vec![], gamma: vec![] };
    for &f in &frames {
        let (root_rot, gamma) = rigid_init(&ctx, &rest_markers, root, &seq.positions[f], &seq.visible[f]);
        let mut theta = mean_theta.clone();
        theta[0] = root_rot;
        init.theta.push(theta);
        init.gamma.push(gamma);
    }

    let stage1 = JointProblem {
        ctx: &ctx,
        seq,
        frames: frames.clone(),
        prior: &config.prior,
        weights: config.weights,
        active: active_markers(seq, k),
        num_betas: b,
        num_markers: k,
        num_joints: j,
    };
    let r1 = minimize(&init.flatten(), |x| stage1.value(x), |x| stage1.value_grad(x), &config.solver);
    if !r1.value.is_finite() {
        return Err(MoshError::NonFinite { term: "stage-1 objective" });
    }
    let solved = init.unflatten(&r1.x);
    log::debug!("stage 1: {} iterations, objective {:.3e}, converged {}", r1.iterations, r1.value, r1.converged);

    let beta = solved.beta.clone();
    let offsets = solved.offsets.clone();
    let mut theta_out: Vec<Vec<[f64; 3]>> = Vec::with_capacity(seq.len());
    let mut gamma_out: Vec<[f64; 3]> = Vec::with_capacity(seq.len());
    let mut frame_converged = Vec::with_capacity(seq.len());
    for t in 0..seq.len() {
        let (theta0, gamma0) = if t == 0 {
            let i = frames.iter().position(|&f| f == 0).unwrap_or(0);
            (solved.theta[i].clone(), solved.gamma[i])
        } else {
            (theta_out[t - 1].clone(), gamma_out[t - 1])
        };
        let history: Vec<Vec<[f64; 3]>> = if t >= 2 { vec![theta_out[t - 2].clone(), theta_out[t - 1].clone()] } else { vec![] };
        let frame = FrameProblem { ctx: &ctx, beta: &beta, offsets: &offsets, seq, t, prior: &config.prior, weights: config.weights, history };
        let mut x0: Vec<f64> = theta0.iter().flatten().copied().collect();
        x0.extend(gamma0);
        let r = minimize(&x0, |x| frame.value(x), |x| frame.value_grad(x), &config.solver);
        if !r.value.is_finite() {
            return Err(MoshError::NonFinite { term: "stage-2 objective" });
        }
        theta_out.push(r.x[..j * 3].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect());
        gamma_out.push([r.x[j * 3], r.x[j * 3 + 1], r.x[j * 3 + 2]]);
        frame_converged.push(r.converged);
    }

    let mut result = FitResult {
        beta,
        offsets,
        theta: theta_out,
        gamma: gamma_out,
        selected_frames: frames,
        stage1_converged: r1.converged,
        converged: false,
        frame_converged,
        marker_rms: 0.0,
    };
    result.converged = result.stage1_converged && result.frame_converged.iter().all(|&c| c);
    result.marker_rms = marker_rms(&ctx, &result, seq);
    if !result.converged {
        log::warn!("fit did not fully converge; returning best-so-far parameters");
    }
    Ok(result)
}

/// RMS distance between fitted latent markers and visible observations.
pub fn marker_rms(ctx: &FitContext, fit: &FitResult, seq: &MarkerSequence) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for t in 0..seq.len() {
        let sim = ctx.markers(&fit.offsets, &fit.beta, &fit.theta[t], fit.gamma[t]);
        for (kk, m) in sim.iter().enumerate() {
            if seq.visible[t][kk] {
                s += (0..3).map(|c| (m[c] - seq.positions[t][kk][c]).powi(2)).sum::<f64>();
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

/// Stage-2 objective of one frame with frozen shape and offsets.
struct FrameProblem<'a, 'b> {
    ctx: &'a FitContext<'b>,
    beta: &'a [f64],
    offsets: &'a [f64],
    seq: &'a MarkerSequence,
    t: usize,
    prior: &'a PosePrior,
    weights: FitWeights,
    /// Solutions of frames `t − 2` and `t − 1` when both exist.
    history: Vec<Vec<[f64; 3]>>,
}

impl FrameProblem<'_, '_> {
    fn value_of<T: Real>(&self, x: &[T]) -> T {
        let j = self.ctx.model.num_joints();
        let theta: Vec<Vec3<T>> = x[..j * 3].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let gamma = [x[j * 3], x[j * 3 + 1], x[j * 3 + 2]];
        let beta: Vec<T> = self.beta.iter().map(|&v| T::cst(v)).collect();
        let offsets: Vec<T> = self.offsets.iter().map(|&v| T::cst(v)).collect();
        let w = &self.weights;
        let mut total =
            data_term(self.ctx, &offsets, &beta, &theta, gamma, &self.seq.positions[self.t], &self.seq.visible[self.t]).scale(w.data);
        if w.theta != 0.0 {
            total = total + pose_prior(self.prior, &theta).scale(w.theta);
        }
        if w.velocity != 0.0 && self.history.len() == 2 {
            let h: Vec<Vec<Vec3<T>>> =
                self.history.iter().map(|p| p.iter().map(|r| [T::cst(r[0]), T::cst(r[1]), T::cst(r[2])]).collect()).collect();
            total = total + velocity_term(&[&h[0], &h[1], &theta]).scale(w.velocity);
        }
        total
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.value_of(x)
    }

    fn value_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        with_tape(|| {
            let vars: Vec<Var> = x.iter().map(|&v| Var::input(v)).collect();
            let f = self.value_of(&vars);
            (f.value(), gradient(f, &vars))
        })
    }
}
