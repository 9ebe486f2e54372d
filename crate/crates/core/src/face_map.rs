//! Blendshape weights to expression parameters.
//!
//! Both face models are linear: ARKit-style templates synthesize
//! `neutral + Σ_j b_j δ_j`, the expression basis synthesizes
//! `neutral + Σ_k p_k e_k`. The transform `W` maps a weight row `b` to
//! parameters `p = b·W` and is fitted by least squares over training rows.

use crate::container::{Container, ContainerError};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::path::Path;
use thiserror::Error;

pub const NUM_BLENDSHAPES: usize = 51;
pub const EXPRESSION_PARAMS: usize = 100;
pub const JAW_PARAMS: usize = 3;

pub const ARKIT_NAMES: [&str; NUM_BLENDSHAPES] = [
    "eyeBlinkLeft", "eyeLookDownLeft", "eyeLookInLeft", "eyeLookOutLeft", "eyeLookUpLeft", "eyeSquintLeft", "eyeWideLeft",
    "eyeBlinkRight", "eyeLookDownRight", "eyeLookInRight", "eyeLookOutRight", "eyeLookUpRight", "eyeSquintRight",
    "eyeWideRight", "jawForward", "jawLeft", "jawRight", "jawOpen", "mouthClose", "mouthFunnel", "mouthPucker",
    "mouthLeft", "mouthRight", "mouthSmileLeft", "mouthSmileRight", "mouthFrownLeft", "mouthFrownRight",
    "mouthDimpleLeft", "mouthDimpleRight", "mouthStretchLeft", "mouthStretchRight", "mouthRollLower", "mouthRollUpper",
    "mouthShrugLower", "mouthShrugUpper", "mouthPressLeft", "mouthPressRight", "mouthLowerDownLeft",
    "mouthLowerDownRight", "mouthUpperUpLeft", "mouthUpperUpRight", "browDownLeft", "browDownRight", "browInnerUp",
    "browOuterUpLeft", "browOuterUpRight", "cheekPuff", "cheekSquintLeft", "cheekSquintRight", "noseSneerLeft",
    "noseSneerRight",
];

#[derive(Debug, Error)]
pub enum FaceMapError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("csv: {0}")]
    Csv(String),
}

/// A linear face model: `neutral + Σ_k c_k · modes[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFace {
    pub neutral: Vec<[f64; 3]>,
    /// `K × V × 3`, offsets from `neutral`.
    pub modes: Vec<Vec<[f64; 3]>>,
}

/// ARKit-style templates, stored as deltas from the neutral face.
pub type BlendshapeTemplates = LinearFace;
/// Expression and linearized jaw modes.
pub type ExpressionBasis = LinearFace;

impl LinearFace {
    pub fn new(neutral: Vec<[f64; 3]>, modes: Vec<Vec<[f64; 3]>>) -> Result<Self, FaceMapError> {
        let v = neutral.len();
        if let Some(k) = modes.iter().position(|m| m.len() != v) {
            return Err(FaceMapError::Dimension(format!("mode {k} has {} vertices, neutral has {v}", modes[k].len())));
        }
        if neutral.iter().chain(modes.iter().flatten()).flatten().any(|x| !x.is_finite()) {
            return Err(FaceMapError::NonFinite("face model"));
        }
        Ok(LinearFace { neutral, modes })
    }

    pub fn num_vertices(&self) -> usize {
        self.neutral.len()
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn synthesize(&self, coeffs: &[f64]) -> Result<Vec<[f64; 3]>, FaceMapError> {
        if coeffs.len() != self.num_modes() {
            return Err(FaceMapError::Dimension(format!("{} coefficients for {} modes", coeffs.len(), self.num_modes())));
        }
        let mut out = self.neutral.clone();
        for (c, mode) in coeffs.iter().zip(&self.modes) {
            if *c == 0.0 {
                continue;
            }
            for (o, d) in out.iter_mut().zip(mode) {
                for i in 0..3 {
                    o[i] += c * d[i];
                }
            }
        }
        Ok(out)
    }

    /// Modes as a `K × 3V` matrix.
    fn mode_matrix(&self) -> DMatrix<f64> {
        let cols = self.num_vertices() * 3;
        DMatrix::from_fn(self.num_modes(), cols, |k, c| self.modes[k][c / 3][c % 3])
    }

    pub fn to_container(&self, kind: &str) -> Container {
        let v = self.num_vertices();
        let k = self.num_modes();
        let mut c = Container::new(kind).with_meta(json!({ "num_vertices": v, "num_modes": k }));
        c.push("neutral", &[v, 3], self.neutral.iter().flatten().copied().collect()).expect("shape");
        c.push("modes", &[k, v, 3], self.modes.iter().flatten().flatten().copied().collect()).expect("shape");
        c
    }

    pub fn from_container(c: &Container, kind: &str) -> Result<Self, FaceMapError> {
        c.expect_kind(kind)?;
        let (shape, neutral) = c.array_shaped("neutral", &[None, Some(3)])?;
        let v = shape[0];
        let (mshape, modes) = c.array_shaped("modes", &[None, Some(v), Some(3)])?;
        let k = mshape[0];
        let neutral = neutral.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect();
        let modes = (0..k)
            .map(|m| modes[m * v * 3..(m + 1) * v * 3].chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect())
            .collect();
        LinearFace::new(neutral, modes)
    }
}

pub fn synthesize_arkit(templates: &BlendshapeTemplates, weights: &[f64]) -> Result<Vec<[f64; 3]>, FaceMapError> {
    templates.synthesize(weights)
}

pub fn synthesize_expr(basis: &ExpressionBasis, params: &[f64]) -> Result<Vec<[f64; 3]>, FaceMapError> {
    basis.synthesize(params)
}

/// `J × P` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl TransformMatrix {
    pub fn get(&self, j: usize, p: usize) -> f64 {
        self.data[j * self.cols + p]
    }

    fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        TransformMatrix { rows: m.nrows(), cols: m.ncols(), data: (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect() }
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new("face_transform").with_meta(json!({ "blendshapes": self.rows, "params": self.cols }));
        c.push("W", &[self.rows, self.cols], self.data.clone()).expect("shape");
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, FaceMapError> {
        c.expect_kind("face_transform")?;
        let (shape, data) = c.array_shaped("W", &[None, None])?;
        Ok(TransformMatrix { rows: shape[0], cols: shape[1], data: data.to_vec() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveInfo {
    pub rank_deficient: bool,
    /// Sum of squared vertex residuals over the training rows.
    pub residual: f64,
}

pub const DEFAULT_REGULARIZATION: f64 = 1e-8;

/// Least-squares `W` minimizing
/// `Σ_rows ‖synthesize_expr(b·W) − synthesize_arkit(b)‖²`.
///
/// With `X` the training rows, `B` the basis modes and `Y` the targets the
/// minimizer is `W = X⁺ Y B⁺`, computed from thin SVDs of `X` and `B`. If
/// either is rank-deficient its pseudo-inverse is Tikhonov-regularized with
/// `reg · σmax²` and a warning is logged.
pub fn solve_transform(
    templates: &BlendshapeTemplates,
    basis: &ExpressionBasis,
    training: &[Vec<f64>],
    reg: f64,
) -> Result<(TransformMatrix, SolveInfo), FaceMapError> {
    let j = templates.num_modes();
    let p = basis.num_modes();
    if templates.num_vertices() != basis.num_vertices() {
        return Err(FaceMapError::Dimension("templates and basis have different vertex counts".into()));
    }
    if training.is_empty() {
        return Err(FaceMapError::Dimension("no training rows".into()));
    }
    if let Some(r) = training.iter().position(|r| r.len() != j) {
        return Err(FaceMapError::Dimension(format!("training row {r} has {} weights, expected {j}", training[r].len())));
    }
    if training.iter().flatten().any(|x| !x.is_finite()) {
        return Err(FaceMapError::NonFinite("training weights"));
    }
    let n = training.len();
    let x = DMatrix::from_fn(n, j, |r, c| training[r][c]);
    let d = templates.mode_matrix();
    let b = basis.mode_matrix();
    let cols = templates.num_vertices() * 3;
    let offset = DMatrix::from_fn(1, cols, |_, c| basis.neutral[c / 3][c % 3] - templates.neutral[c / 3][c % 3]);
    let ones = DMatrix::from_element(n, 1, 1.0);
    let y = &x * &d - &ones * &offset;

    let sx = x.clone().svd(true, true);
    let sb = b.clone().svd(true, true);
    let (inv_x, def_x) = regularized_inverse(sx.singular_values.as_slice(), j, reg);
    let (inv_b, def_b) = regularized_inverse(sb.singular_values.as_slice(), p, reg);
    let rank_deficient = def_x || def_b;
    if rank_deficient {
        log::warn!("face transform system is rank-deficient; using ridge regularization {reg:e}·σmax²");
    }
    let (ux, vtx) = (sx.u.expect("u"), sx.v_t.expect("v_t"));
    let (ub, vtb) = (sb.u.expect("u"), sb.v_t.expect("v_t"));
    let mut core = ux.transpose() * &y * vtb.transpose();
    for r in 0..core.nrows() {
        for c in 0..core.ncols() {
            core[(r, c)] *= inv_x[r] * inv_b[c];
        }
    }
    let w = vtx.transpose() * core * ub.transpose();
    if w.iter().any(|v| !v.is_finite()) {
        return Err(FaceMapError::NonFinite("transform"));
    }
    let resid = &x * &w * &b - &y;
    let residual = resid.iter().map(|v| v * v).sum();
    Ok((TransformMatrix::from_dmatrix(&w), SolveInfo { rank_deficient, residual }))
}

/// Pseudo-inverse of singular values. When fewer than `full_rank` of them
/// are numerically nonzero, `σ / (σ² + reg·σmax²)` is used instead.
fn regularized_inverse(sv: &[f64], full_rank: usize, reg: f64) -> (Vec<f64>, bool) {
    let max = sv.iter().copied().fold(0.0, f64::max);
    let rank = sv.iter().filter(|&&v| v > max * 1e-10).count();
    let deficient = rank < full_rank || max == 0.0;
    let ridge = if deficient { reg * max * max } else { 0.0 };
    let inv = sv.iter().map(|&v| if v == 0.0 { 0.0 } else { v / (v * v + ridge) }).collect();
    (inv, deficient)
}

/// Sum of squared vertex residuals of `w` over the training rows.
pub fn transform_residual(templates: &BlendshapeTemplates, basis: &ExpressionBasis, training: &[Vec<f64>], w: &TransformMatrix) -> Result<f64, FaceMapError> {
    let mut total = 0.0;
    for row in training {
        let target = templates.synthesize(row)?;
        let params = map_row(w, row)?;
        let got = basis.synthesize(&params)?;
        total += target.iter().zip(&got).map(|(a, b)| (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>()).sum::<f64>();
    }
    Ok(total)
}

fn map_row(w: &TransformMatrix, row: &[f64]) -> Result<Vec<f64>, FaceMapError> {
    if row.len() != w.rows {
        return Err(FaceMapError::Dimension(format!("weight row has {} entries, W has {} rows", row.len(), w.rows)));
    }
    let mut out = vec![0.0; w.cols];
    for (jj, &b) in row.iter().enumerate() {
        for (p, o) in out.iter_mut().enumerate() {
            *o += b * w.data[jj * w.cols + p];
        }
    }
    Ok(out)
}

/// Row-wise `b·W`.
pub fn map_weights(w: &TransformMatrix, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, FaceMapError> {
    rows.iter().map(|r| map_row(w, r)).collect()
}

/// The 51 one-hot rows followed by `extra` seeded uniform `[0, 1)` rows.
pub fn default_training_rows(num_blendshapes: usize, extra: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = (0..num_blendshapes)
        .map(|j| {
            let mut r = vec![0.0; num_blendshapes];
            r[j] = 1.0;
            r
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rows.extend((0..extra).map(|_| (0..num_blendshapes).map(|_| rng.gen::<f64>()).collect()));
    rows
}

/// Names for the output parameter columns: `expr_0..`, then `jaw_x, jaw_y, jaw_z`
/// when the last three are jaw modes.
pub fn param_names(count: usize) -> Vec<String> {
    if count == EXPRESSION_PARAMS + JAW_PARAMS {
        (0..EXPRESSION_PARAMS).map(|i| format!("expr_{i}")).chain(["jaw_x", "jaw_y", "jaw_z"].map(String::from)).collect()
    } else {
        (0..count).map(|i| format!("p_{i}")).collect()
    }
}

/// Reads `frame,<weight columns>` rows; the frame column is checked to be consecutive.
pub fn read_weight_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), FaceMapError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| FaceMapError::Csv(e.to_string()))?;
    let header: Vec<String> = rdr.headers().map_err(|e| FaceMapError::Csv(e.to_string()))?.iter().map(|s| s.trim().to_string()).collect();
    if header.first().map(String::as_str) != Some("frame") {
        return Err(FaceMapError::Csv("first column must be 'frame'".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| FaceMapError::Csv(e.to_string()))?;
        let frame: usize = rec[0].trim().parse().map_err(|_| FaceMapError::Csv(format!("row {}: bad frame index", i + 1)))?;
        if frame != i {
            return Err(FaceMapError::Csv(format!("row {}: expected frame {i}, found {frame}", i + 1)));
        }
        let vals = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>().map_err(|_| FaceMapError::Csv(format!("row {}: bad value '{v}'", i + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(vals);
    }
    Ok((header[1..].to_vec(), rows))
}

pub fn write_weight_csv(path: &Path, names: &[String], rows: &[Vec<f64>]) -> Result<(), FaceMapError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| FaceMapError::Csv(e.to_string()))?;
    let err = |e: csv::Error| FaceMapError::Csv(e.to_string());
    let mut header = vec!["frame".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(err)?;
    for (t, r) in rows.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(r.iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| FaceMapError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LinearFace {
        LinearFace::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
            vec![vec![[0.0, 1.0, 0.0], [0.0, 0.0, 0.0]], vec![[0.0, 0.0, 0.0], [0.0, 0.0, 2.0]]],
        )
        .unwrap()
    }

    #[test]
    fn synthesis_hand_cases() {
        let f = tiny();
        assert_eq!(f.synthesize(&[0.0, 0.0]).unwrap(), f.neutral);
        assert_eq!(f.synthesize(&[1.0, 0.0]).unwrap(), vec![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]);
        let a = f.synthesize(&[0.25, 0.5]).unwrap();
        let b = f.synthesize(&[0.5, -0.25]).unwrap();
        let ab = f.synthesize(&[0.75, 0.25]).unwrap();
        for v in 0..2 {
            for c in 0..3 {
                assert_eq!(a[v][c] + b[v][c] - f.neutral[v][c], ab[v][c]);
            }
        }
        assert!(f.synthesize(&[1.0]).is_err());
    }

    #[test]
    fn identity_case() {
        let f = tiny();
        let rows = default_training_rows(2, 5, 1);
        let (w, info) = solve_transform(&f, &f, &rows, DEFAULT_REGULARIZATION).unwrap();
        assert!(!info.rank_deficient);
        for j in 0..2 {
            for p in 0..2 {
                let expected = if j == p { 1.0 } else { 0.0 };
                assert!((w.get(j, p) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn null_system_gives_zero() {
        let f = tiny();
        let (w, info) = solve_transform(&f, &f, &[vec![0.0, 0.0]], DEFAULT_REGULARIZATION).unwrap();
        assert!(info.rank_deficient);
        assert!(w.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn default_rows_start_one_hot() {
        let r = default_training_rows(51, 200, 0);
        assert_eq!(r.len(), 251);
        assert_eq!(r[7].iter().sum::<f64>(), 1.0);
        assert_eq!(r[7][7], 1.0);
    }
}
