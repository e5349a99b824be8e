//! Axis-angle conversions for rotation errors and angular finite differences.

use nalgebra::{Matrix3, Rotation3, Vector3};
use std::f64::consts::PI;

/// Below this angle the rotation vector is taken from the skew part alone.
pub const SMALL_ANGLE: f64 = 1e-7;
/// Within this distance of π the axis is recovered from the symmetric part.
pub const NEAR_PI: f64 = 1e-4;

/// `(M)^∨` of the skew-symmetric part of `m`, i.e. `vee((M − Mᵀ)/2)`.
pub fn vee_skew(m: &Matrix3<f64>) -> Vector3<f64> {
    0.5 * Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    )
}

/// Angle `α ∈ [0, π]` and unit axis `m̂` with `R = exp(α [m̂]^)`.
///
/// The angle combines the trace (`cos α`) with the skew part (`sin α`),
/// which stays accurate for small angles where `acos` of the trace does not.
/// For `α` below [`SMALL_ANGLE`] the axis is ill-defined and `None` is
/// returned in its place.
pub fn axis_angle(r: &Matrix3<f64>) -> (f64, Option<Vector3<f64>>) {
    let cos_a = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let s = vee_skew(r);
    let sin_a = s.norm();
    let alpha = sin_a.atan2(cos_a);
    if alpha < SMALL_ANGLE {
        return (alpha, None);
    }
    if alpha > PI - NEAR_PI {
        // (R + Rᵀ)/2 − cos α I = (1 − cos α) m̂ m̂ᵀ
        let sym = 0.5 * (r + r.transpose()) - cos_a * Matrix3::identity();
        let (mut best, mut col) = (f64::NEG_INFINITY, 0);
        for j in 0..3 {
            if sym[(j, j)] > best {
                best = sym[(j, j)];
                col = j;
            }
        }
        let mut axis = sym.column(col).into_owned().normalize();
        if axis.dot(&s) < 0.0 {
            axis = -axis;
        }
        return (alpha, Some(axis));
    }
    (alpha, Some(s / sin_a))
}

/// Rotation vector `α m̂` of `r`. Small rotations return the skew part
/// directly, which agrees with the exact log to third order in the angle.
pub fn log_map(r: &Rotation3<f64>) -> Vector3<f64> {
    match axis_angle(r.matrix()) {
        (alpha, Some(axis)) => alpha * axis,
        (_, None) => vee_skew(r.matrix()),
    }
}

pub fn exp_map(v: &Vector3<f64>) -> Rotation3<f64> {
    Rotation3::from_scaled_axis(*v)
}
