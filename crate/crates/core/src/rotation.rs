//! Rotation representations used throughout the motion pipeline.
//!
//! Poses are stored in the continuous 6D form (the first two columns of a
//! rotation matrix), converted to matrices via Gram-Schmidt, and compared with
//! the geodesic angle on SO(3). Axis-angle is the parameterization used by the
//! body model and the fitting code.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RotationError {
    #[error("invalid rotation input: {0}")]
    InvalidInput(String),
    #[error("degenerate 6D rotation: {0}")]
    Degenerate(&'static str),
}

/// First two columns of a rotation matrix, `(c1x, c1y, c1z, c2x, c2y, c2z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D(pub [f64; 6]);

impl Rot6D {
    pub const IDENTITY: Rot6D = Rot6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    pub fn from_slice(values: &[f64]) -> Result<Self, RotationError> {
        let arr: [f64; 6] = values
            .try_into()
            .map_err(|_| RotationError::InvalidInput(format!("expected 6 values, got {}", values.len())))?;
        Ok(Rot6D(arr))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(pub Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotationMatrix(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotationMatrix(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotationMatrix(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn mul(&self, other: &RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * other.0)
    }

    pub fn transpose(&self) -> RotationMatrix {
        RotationMatrix(self.0.transpose())
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let r = self.0 * Vector3::from(v);
        [r.x, r.y, r.z]
    }

    /// Largest absolute deviation from orthonormality with positive determinant.
    pub fn orthonormality_error(&self) -> f64 {
        let m = &self.0;
        let gram = m.transpose() * m - Matrix3::identity();
        gram.abs().max().max((m.determinant() - 1.0).abs())
    }
}

/// Unit axis and an angle in `[0, π]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle {
    pub axis: [f64; 3],
    pub angle: f64,
}

impl AxisAngle {
    pub fn identity() -> Self {
        AxisAngle { axis: [1.0, 0.0, 0.0], angle: 0.0 }
    }

    /// Builds the canonical axis-angle from a rotation vector `angle * axis`.
    pub fn from_rotation_vector(v: [f64; 3]) -> Self {
        matrix_to_axis_angle(&axis_angle_to_matrix(&AxisAngle::raw_from_vector(v)))
    }

    fn raw_from_vector(v: [f64; 3]) -> Self {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n == 0.0 {
            AxisAngle::identity()
        } else {
            AxisAngle { axis: [v[0] / n, v[1] / n, v[2] / n], angle: n }
        }
    }

    pub fn rotation_vector(&self) -> [f64; 3] {
        [self.axis[0] * self.angle, self.axis[1] * self.angle, self.axis[2] * self.angle]
    }
}

pub fn rot6d_from_matrix(r: &RotationMatrix) -> Result<Rot6D, RotationError> {
    let m = &r.0;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(RotationError::InvalidInput("non-finite matrix entry".into()));
    }
    Ok(Rot6D([m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]))
}

pub fn matrix_from_rot6d(r: &Rot6D) -> Result<RotationMatrix, RotationError> {
    let v = &r.0;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(RotationError::InvalidInput("non-finite 6D component".into()));
    }
    let a1 = Vector3::new(v[0], v[1], v[2]);
    let a2 = Vector3::new(v[3], v[4], v[5]);
    let n1 = a1.norm();
    if n1 <= 1e-9 {
        return Err(RotationError::Degenerate("first column has zero length"));
    }
    let b1 = a1 / n1;
    let u2 = a2 - b1 * b1.dot(&a2);
    let n2 = u2.norm();
    if n2 <= 1e-9 * a2.norm().max(1.0) {
        return Err(RotationError::Degenerate("columns are parallel"));
    }
    let b2 = u2 / n2;
    let b3 = b1.cross(&b2);
    Ok(RotationMatrix(Matrix3::from_columns(&[b1, b2, b3])))
}

/// Angle of the relative rotation `R1ᵀ R2`, in `[0, π]`.
pub fn geodesic_distance(r1: &RotationMatrix, r2: &RotationMatrix) -> f64 {
    let trace = (r1.0.transpose() * r2.0).trace();
    ((trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

pub fn axis_angle_to_matrix(aa: &AxisAngle) -> RotationMatrix {
    let [x, y, z] = aa.axis;
    let n = (x * x + y * y + z * z).sqrt();
    if aa.angle == 0.0 || n == 0.0 {
        return RotationMatrix::identity();
    }
    let (x, y, z) = (x / n, y / n, z / n);
    let (s, c) = aa.angle.sin_cos();
    let t = 1.0 - c;
    RotationMatrix(Matrix3::new(
        t * x * x + c,
        t * x * y - s * z,
        t * x * z + s * y,
        t * x * y + s * z,
        t * y * y + c,
        t * y * z - s * x,
        t * x * z - s * y,
        t * y * z + s * x,
        t * z * z + c,
    ))
}

pub fn matrix_to_axis_angle(r: &RotationMatrix) -> AxisAngle {
    let m = &r.0;
    let skew = Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let cos = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin = (skew.norm() / 2.0).min(1.0);
    let angle = sin.atan2(cos);
    if angle < 1e-14 {
        return AxisAngle::identity();
    }
    if cos > -0.9 {
        let axis = skew / (2.0 * sin);
        let axis = axis / axis.norm();
        return AxisAngle { axis: [axis.x, axis.y, axis.z], angle };
    }
    // Near π the skew part vanishes; recover the axis from the symmetric part
    // B = (R + Rᵀ)/2 - cos I = (1 - cos) n nᵀ.
    let sym = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos;
    let diag = [sym[(0, 0)], sym[(1, 1)], sym[(2, 2)]];
    let k = (0..3).max_by(|&a, &b| diag[a].total_cmp(&diag[b])).unwrap_or(0);
    let mut axis = sym.column(k).into_owned();
    axis /= axis.norm();
    // Within rounding of π both signs describe the same rotation.
    let flip = if skew.norm() < 1e-12 { !lexicographically_positive(&axis) } else { axis.dot(&skew) < 0.0 };
    if flip {
        axis = -axis;
    }
    AxisAngle { axis: [axis.x, axis.y, axis.z], angle }
}

fn lexicographically_positive(v: &Vector3<f64>) -> bool {
    for c in v.iter() {
        if *c != 0.0 {
            return *c > 0.0;
        }
    }
    true
}

/// Converts a rotation vector (`angle * axis`) to a matrix.
pub fn rotation_vector_to_matrix(v: [f64; 3]) -> RotationMatrix {
    axis_angle_to_matrix(&AxisAngle::raw_from_vector(v))
}

pub fn matrix_to_rotation_vector(r: &RotationMatrix) -> [f64; 3] {
    matrix_to_axis_angle(r).rotation_vector()
}

/// Elementary axis of a BVH rotation channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// Composes elementary rotations in the listed order: `R = R_a0 · R_a1 · ...`.
/// Angles are in radians.
pub fn matrix_from_euler(order: &[Axis], angles: &[f64]) -> RotationMatrix {
    order.iter().zip(angles).fold(RotationMatrix::identity(), |acc, (axis, &a)| {
        let step = match axis {
            Axis::X => RotationMatrix::about_x(a),
            Axis::Y => RotationMatrix::about_y(a),
            Axis::Z => RotationMatrix::about_z(a),
        };
        acc.mul(&step)
    })
}

/// Inverse of [`matrix_from_euler`] for a three-axis order with distinct axes.
/// Returns radians; the middle angle lies in `[-π/2, π/2]`.
pub fn euler_from_matrix(order: [Axis; 3], r: &RotationMatrix) -> Result<[f64; 3], RotationError> {
    let idx = |a: Axis| match a {
        Axis::X => 0usize,
        Axis::Y => 1,
        Axis::Z => 2,
    };
    let (i, j, k) = (idx(order[0]), idx(order[1]), idx(order[2]));
    if i == j || j == k || i == k {
        return Err(RotationError::InvalidInput("euler order needs three distinct axes".into()));
    }
    // Parity of the permutation (i, j, k) decides the sign pattern.
    let sign = if (j + 3 - i) % 3 == 1 { 1.0 } else { -1.0 };
    let m = &r.0;
    let sy = (sign * m[(i, k)]).clamp(-1.0, 1.0);
    let b = sy.asin();
    let (a, c);
    if sy.abs() < 1.0 - 1e-12 {
        a = (-sign * m[(j, k)]).atan2(m[(k, k)]);
        c = (-sign * m[(i, j)]).atan2(m[(i, i)]);
    } else {
        // Gimbal lock: fold the whole remaining rotation into the first angle.
        c = 0.0;
        a = (sign * m[(k, j)]).atan2(m[(j, j)]);
    }
    Ok([a, b, c])
}
