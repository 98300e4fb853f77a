//! Axis-angle rotations and rigid transforms.

use nalgebra::{Matrix3, Vector3};

/// Below this rotation magnitude Rodrigues and its derivative switch to a
/// second-order Taylor expansion to avoid 0/0.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric cross-product matrix `[v]x`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues coefficients `a = sin t / t`, `b = (1 - cos t) / t^2` and their
/// derivatives with respect to `t`, with series fallbacks for small angles.
fn rodrigues_coeffs(t: f64) -> (f64, f64, f64, f64) {
    if t < 1e-4 {
        let t2 = t * t;
        let a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
        let b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
        let da = -t / 3.0 + t * t2 / 30.0;
        let db = -t / 12.0 + t * t2 / 180.0;
        (a, b, da, db)
    } else {
        let (s, c) = t.sin_cos();
        let a = s / t;
        let b = (1.0 - c) / (t * t);
        let da = (c * t - s) / (t * t);
        let db = (s * t - 2.0 * (1.0 - c)) / (t * t * t);
        (a, b, da, db)
    }
}

/// Rotation matrix for an axis-angle vector (Rodrigues' formula).
pub fn rodrigues(aa: &Vector3<f64>) -> Matrix3<f64> {
    let t = aa.norm();
    let k = skew(aa);
    if t < SMALL_ANGLE {
        // R = I + [w]x + 1/2 [w]x^2 + O(t^3)
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let (a, b, _, _) = rodrigues_coeffs(t);
    Matrix3::identity() + a * k + b * k * k
}

/// Partial derivatives of the rotation matrix with respect to the three
/// axis-angle components: returns `[dR/dw_x, dR/dw_y, dR/dw_z]`.
pub fn rodrigues_jacobian(aa: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let t = aa.norm();
    let k = skew(aa);
    let mut out = [Matrix3::zeros(); 3];
    if t < SMALL_ANGLE {
        for c in 0..3 {
            let e = skew(&Vector3::ith(c, 1.0));
            out[c] = e + 0.5 * (e * k + k * e);
        }
        return out;
    }
    let (a, b, da, db) = rodrigues_coeffs(t);
    let k2 = k * k;
    for c in 0..3 {
        let e = skew(&Vector3::ith(c, 1.0));
        let dt = aa[c] / t; // d|w|/dw_c
        out[c] = (da * dt) * k + a * e + (db * dt) * k2 + b * (e * k + k * e);
    }
    out
}

/// A rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rot: Matrix3<f64>,
    pub trans: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rot: Matrix3::identity(),
            trans: Vector3::zeros(),
        }
    }

    pub fn new(rot: Matrix3<f64>, trans: Vector3<f64>) -> Self {
        Self { rot, trans }
    }

    /// Rotation about a fixed point: `p -> R (p - center) + center`.
    pub fn about_point(rot: Matrix3<f64>, center: Vector3<f64>) -> Self {
        Self {
            trans: center - rot * center,
            rot,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot * p + self.trans
    }

    /// Composition `self . other` (apply `other` first).
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rot: self.rot * other.rot,
            trans: self.rot * other.trans + self.trans,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rot.transpose();
        RigidTransform {
            rot: rt,
            trans: -(rt * self.trans),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rot.iter().all(|v| v.is_finite()) && self.trans.iter().all(|v| v.is_finite())
    }
}
