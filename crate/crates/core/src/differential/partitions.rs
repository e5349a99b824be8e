//! Subsegment twist partitions and their serial composition.

use nalgebra::{Matrix3, Matrix6x2, Vector3, Vector6};

use crate::kinematics::{arc_factors, skew, CremPose, STRAIGHT_THRESHOLD};
use crate::model::THETA0;

/// `χ_a = ∂/∂θ [(sin θ − 1)/(θ − θ0)]`.
pub fn chi_a(theta: f64) -> f64 {
    let u = theta - THETA0;
    if u.abs() < STRAIGHT_THRESHOLD {
        let u2 = u * u;
        -0.5 + u2 / 8.0 - u2 * u2 / 144.0
    } else {
        let h = (0.5 * u).sin();
        (2.0 * h * h - u * u.sin()) / (u * u)
    }
}

/// `χ_b = ∂/∂θ [−cos θ/(θ − θ0)]`.
pub fn chi_b(theta: f64) -> f64 {
    let u = theta - THETA0;
    if u.abs() < STRAIGHT_THRESHOLD {
        -u / 3.0 + u * u * u / 30.0
    } else {
        (u * u.cos() - u.sin()) / (u * u)
    }
}

/// `χ_c = (1 − sin θ)/(θ − θ0)`.
pub fn chi_c(theta: f64) -> f64 {
    -arc_factors(theta).0
}

/// Velocity and angular-velocity partitions of one constant-curvature
/// subsegment, expressed in its base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Partitions {
    pub v_theta: Vector3<f64>,
    pub omega_theta: Vector3<f64>,
    pub v_delta: Vector3<f64>,
    pub omega_delta: Vector3<f64>,
}

fn stack(v: &Vector3<f64>, w: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z)
}

pub fn jacobian_partitions(theta: f64, delta: f64, length: f64) -> Partitions {
    let (sd, cd) = delta.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (xa, xb, xc) = (chi_a(theta), chi_b(theta), chi_c(theta));
    Partitions {
        v_theta: length * Vector3::new(cd * xa, -sd * xa, xb),
        omega_theta: Vector3::new(-sd, -cd, 0.0),
        v_delta: length * Vector3::new(sd * xc, cd * xc, 0.0),
        // The first entry is cδ·cθ; cδ·sθ would not vanish at the straight
        // configuration, where the rotation is the identity for every δ.
        omega_delta: Vector3::new(cd * ct, -sd * ct, st - 1.0),
    }
}

/// Pose Jacobians of the two-subsegment composition w.r.t. φ, δ and q_s with
/// the equilibrium held fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XiJacobians {
    pub phi: Matrix6x2<f64>,
    pub delta: Vector6<f64>,
    pub q_s: Vector6<f64>,
}

/// Maps a twist of the empty subsegment (in {C}) to the base frame and
/// combines it with a twist of the inserted subsegment.
fn compose_twist(
    r_c: &Matrix3<f64>,
    p_gc: &Vector3<f64>,
    inserted: Option<(&Vector3<f64>, &Vector3<f64>)>,
    empty: Option<(&Vector3<f64>, &Vector3<f64>)>,
) -> Vector6<f64> {
    let mut v = Vector3::zeros();
    let mut w = Vector3::zeros();
    if let Some((vs, ws)) = inserted {
        v += vs - skew(&(r_c * p_gc)) * ws;
        w += ws;
    }
    if let Some((ve, we)) = empty {
        v += r_c * ve;
        w += r_c * we;
    }
    stack(&v, &w)
}

pub fn assemble_xi_jacobians(pose: &CremPose, length: f64, q_s: f64, delta: f64) -> XiJacobians {
    let eq = &pose.equilibrium;
    let inserted = jacobian_partitions(eq.theta_s, delta, q_s);
    let empty = jacobian_partitions(eq.theta_eps, delta, length - q_s);
    let r_c = *pose.separation.rotation.matrix();
    let p_gc = pose.empty.position;

    let col_s = compose_twist(
        &r_c,
        &p_gc,
        Some((&inserted.v_theta, &inserted.omega_theta)),
        None,
    );
    let col_eps = compose_twist(
        &r_c,
        &p_gc,
        None,
        Some((&empty.v_theta, &empty.omega_theta)),
    );
    let d_delta = compose_twist(
        &r_c,
        &p_gc,
        Some((&inserted.v_delta, &inserted.omega_delta)),
        Some((&empty.v_delta, &empty.omega_delta)),
    );

    // Unit-length segment positions: ∂p/∂D of a segment of length D.
    let unit = |theta: f64| {
        let (a, b) = arc_factors(theta);
        let (sd, cd) = delta.sin_cos();
        Vector3::new(cd * a, -sd * a, b)
    };
    let dp = unit(eq.theta_s) - r_c * unit(eq.theta_eps);

    XiJacobians {
        phi: Matrix6x2::from_columns(&[col_s, col_eps]),
        delta: d_delta,
        q_s: stack(&dp, &Vector3::zeros()),
    }
}
