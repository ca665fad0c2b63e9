//! Rotation matrices, the continuous 6D representation and Euler angles.
//!
//! A 6D rotation feature stores the first two columns of the rotation
//! matrix, `(R00, R10, R20, R01, R11, R21)`.

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
pub const IDENTITY_6D: [f64; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

const DEGENERATE_NORM: f64 = 1e-8;

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn mat_vec(a: &Mat3, v: &Vec3) -> Vec3 {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

pub fn determinant(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Gram–Schmidt on the two stored columns; the third is their cross product.
pub fn rotation_6d_to_matrix(r: &[f64]) -> Result<Mat3> {
    if r.len() != 6 {
        return Err(Error::shape(format!("6D rotation needs 6 values, got {}", r.len())));
    }
    let a1 = [r[0], r[1], r[2]];
    let a2 = [r[3], r[4], r[5]];
    let n1 = dot3(&a1, &a1).sqrt();
    if n1.is_nan() || n1 < DEGENERATE_NORM {
        return Err(Error::DegenerateRotation(format!(
            "first column norm {n1:e} below {DEGENERATE_NORM:e}"
        )));
    }
    let b1 = [a1[0] / n1, a1[1] / n1, a1[2] / n1];
    let p = dot3(&b1, &a2);
    let u = [a2[0] - p * b1[0], a2[1] - p * b1[1], a2[2] - p * b1[2]];
    let n2 = dot3(&u, &u).sqrt();
    if n2.is_nan() || n2 < DEGENERATE_NORM {
        return Err(Error::DegenerateRotation(format!(
            "second column is parallel to the first (residual norm {n2:e})"
        )));
    }
    let b2 = [u[0] / n2, u[1] / n2, u[2] / n2];
    let b3 = cross(&b1, &b2);
    Ok([[b1[0], b2[0], b3[0]], [b1[1], b2[1], b3[1]], [b1[2], b2[2], b3[2]]])
}

pub fn matrix_to_6d(m: &Mat3) -> [f64; 6] {
    [m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]]
}

/// Rotation by `angle` radians about coordinate axis `axis` (0 = X, 1 = Y, 2 = Z).
pub fn axis_rotation(axis: usize, angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    match axis {
        0 => [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        1 => [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        _ => [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
    }
}

/// Intrinsic Euler order: `R = R(axes[0]) · R(axes[1]) · R(axes[2])`, the
/// convention of BVH channel lists.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EulerOrder {
    pub axes: [usize; 3],
}

impl EulerOrder {
    pub const ZYX: EulerOrder = EulerOrder { axes: [2, 1, 0] };

    pub fn new(axes: [usize; 3]) -> Result<Self> {
        let mut sorted = axes;
        sorted.sort_unstable();
        if sorted != [0, 1, 2] {
            return Err(Error::invalid(format!(
                "Euler axes {axes:?} are not a permutation of X, Y, Z"
            )));
        }
        Ok(Self { axes })
    }

    pub fn name(&self) -> String {
        self.axes.iter().map(|&a| ['X', 'Y', 'Z'][a]).collect()
    }

    /// Angles in radians, listed in channel order.
    pub fn to_matrix(&self, angles: &[f64; 3]) -> Mat3 {
        let a = axis_rotation(self.axes[0], angles[0]);
        let b = axis_rotation(self.axes[1], angles[1]);
        let c = axis_rotation(self.axes[2], angles[2]);
        mat_mul(&mat_mul(&a, &b), &c)
    }

    /// Inverse of [`EulerOrder::to_matrix`]; the middle angle lies in
    /// `[-π/2, π/2]`. At gimbal lock the last angle is set to zero.
    pub fn from_matrix(&self, m: &Mat3) -> [f64; 3] {
        let [i, j, k] = self.axes;
        let even = matches!((i, j, k), (0, 1, 2) | (1, 2, 0) | (2, 0, 1));
        let sign = if even { 1.0 } else { -1.0 };
        let sb = (sign * m[i][k]).clamp(-1.0, 1.0);
        let b = sb.asin();
        if sb.abs() < 1.0 - 1e-12 {
            let a = (-sign * m[j][k]).atan2(m[k][k]);
            let c = (-sign * m[i][j]).atan2(m[i][i]);
            [a, b, c]
        } else {
            let a = (sign * m[k][j]).atan2(m[j][j]);
            [a, b, 0.0]
        }
    }
}
