//! Direct kinematics: constant-curvature subsegment pose and the two-subsegment
//! composition giving the end-disk transform.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};

use crate::error::Result;
use crate::model::{
    solve_equilibrium, ConfigState, EquilibriumConfig, RobotParams, UncertaintyParams, THETA0,
};

/// Below this distance from the straight configuration the pose prefactors
/// are evaluated by their Taylor series.
pub const STRAIGHT_THRESHOLD: f64 = 1e-4;

/// Position and orientation of a frame relative to a parent frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: Rotation3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            position: Vector3::zeros(),
            rotation: Rotation3::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, rotation: Rotation3<f64>) -> Self {
        Pose { position, rotation }
    }

    /// `self * child`: pose of `child` expressed in `self`'s parent frame.
    pub fn compose(&self, child: &Pose) -> Pose {
        Pose {
            position: self.position + self.rotation * child.position,
            rotation: self.rotation * child.rotation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose {
            position: -(r_inv * self.position),
            rotation: r_inv,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.rotation * p
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut t = Matrix4::identity();
        t.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation.matrix());
        t.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.position);
        t
    }
}

/// Six-vector pose differential `dξ = [dx; dμ]`, both parts in the base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseDifferential {
    pub dx: Vector3<f64>,
    pub dmu: Vector3<f64>,
}

impl PoseDifferential {
    pub fn to_vector(&self) -> nalgebra::Vector6<f64> {
        nalgebra::Vector6::new(
            self.dx.x, self.dx.y, self.dx.z, self.dmu.x, self.dmu.y, self.dmu.z,
        )
    }
}

/// `(sin θ − 1)/(θ − π/2)` and `−cos θ/(θ − π/2)` written in `u = θ − π/2`.
pub(crate) fn arc_factors(theta: f64) -> (f64, f64) {
    let u = theta - THETA0;
    if u.abs() < STRAIGHT_THRESHOLD {
        let u2 = u * u;
        (-u / 2.0 + u * u2 / 24.0, 1.0 - u2 / 6.0 + u2 * u2 / 120.0)
    } else {
        let h = (0.5 * u).sin();
        (-2.0 * h * h / u, u.sin() / u)
    }
}

/// End-disk pose of a constant-curvature segment of length `length`, end-disk
/// angle `theta` and bending-plane angle `delta`, relative to its base disk.
///
/// The bending plane contains `ẑ` and `[cos δ, −sin δ, 0]`; the rotation is
/// `Rz(−δ) Ry(π/2 − θ) Rz(δ)`.
pub fn segment_pose(length: f64, theta: f64, delta: f64) -> Pose {
    let (a, b) = arc_factors(theta);
    let (sd, cd) = delta.sin_cos();
    let position = length * Vector3::new(cd * a, -sd * a, b);
    let rotation = Rotation3::from_axis_angle(&Vector3::z_axis(), -delta)
        * Rotation3::from_axis_angle(&Vector3::y_axis(), THETA0 - theta)
        * Rotation3::from_axis_angle(&Vector3::z_axis(), delta);
    Pose { position, rotation }
}

/// End-disk pose of a segment plus the separation-plane intermediates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CremPose {
    /// End disk {G} in the base {B}.
    pub tip: Pose,
    /// Separation plane {C} in {B}.
    pub separation: Pose,
    /// End disk {G} in {C}.
    pub empty: Pose,
    pub equilibrium: EquilibriumConfig,
}

/// Pose map for a given equilibrium, bypassing the solver: both subsegments
/// share the bending plane `delta`.
pub fn pose_from_equilibrium(
    params: &RobotParams,
    phi: &EquilibriumConfig,
    delta: f64,
    q_s: f64,
) -> CremPose {
    let separation = segment_pose(q_s, phi.theta_s, delta);
    let empty = segment_pose(params.length - q_s, phi.theta_eps, delta);
    CremPose {
        tip: separation.compose(&empty),
        separation,
        empty,
        equilibrium: *phi,
    }
}

/// Forward kinematics `T = F_T(psi, q_s, k)`.
pub fn crem_pose(
    params: &RobotParams,
    psi: ConfigState,
    q_s: f64,
    k: &UncertaintyParams,
) -> Result<CremPose> {
    let phi = solve_equilibrium(params, psi, q_s, k)?;
    Ok(pose_from_equilibrium(params, &phi, psi.delta, q_s))
}

/// Skew-symmetric cross-product matrix `[v]^`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn assert_rotation_valid(r: &Rotation3<f64>) {
        let m = r.matrix();
        assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-12);
        assert_abs_diff_eq!(m.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn straight_segment() {
        for delta in [0.0, 1.0, -2.5] {
            let pose = segment_pose(44.3, THETA0, delta);
            assert_abs_diff_eq!(pose.position, Vector3::new(0.0, 0.0, 44.3), epsilon = 1e-15);
            assert_abs_diff_eq!(
                *pose.rotation.matrix(),
                Matrix3::identity(),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn quarter_circle() {
        let pose = segment_pose(44.3, 0.0, 0.0);
        let c = 2.0 * 44.3 / PI;
        assert_abs_diff_eq!(pose.position, Vector3::new(c, 0.0, c), epsilon = 1e-12);
        assert_abs_diff_eq!(pose.position.x, 28.202, epsilon = 1e-3);
        // Tip tangent now points along +x.
        assert_abs_diff_eq!(pose.rotation * Vector3::z(), Vector3::x(), epsilon = 1e-15);
    }

    /// Independent arc construction: centre of curvature in the bending plane,
    /// then rotate the base point about it by the arc angle.
    fn arc_tip(length: f64, theta: f64, delta: f64) -> Vector3<f64> {
        let turn = THETA0 - theta;
        let radius = length / turn;
        let dir = Vector3::new(delta.cos(), -delta.sin(), 0.0);
        let centre = radius * dir;
        // In the (dir, z) plane, rotate (−radius, 0) about the centre by `turn`.
        let local = Vector3::new(-radius * turn.cos(), 0.0, radius * turn.sin());
        centre + local.x * dir + local.z * Vector3::z()
    }

    #[test]
    fn matches_arc_construction() {
        let (l, th, de) = (44.3, 30f64.to_radians(), 40f64.to_radians());
        let pose = segment_pose(l, th, de);
        assert_abs_diff_eq!(pose.position, arc_tip(l, th, de), epsilon = 1e-12);
        for &(th, de) in &[(0.2, -1.0), (1.2, 2.0), (2.5, 0.3)] {
            assert_abs_diff_eq!(
                segment_pose(10.0, th, de).position,
                arc_tip(10.0, th, de),
                epsilon = 1e-12
            );
        }
        assert_rotation_valid(&pose.rotation);
    }

    #[test]
    fn series_branch_is_continuous() {
        for delta in [0.0, 0.9] {
            for u in [0.99e-4, -0.99e-4, 1.01e-4, -1.01e-4, 1e-7] {
                let near = segment_pose(30.0, THETA0 + u, delta).position;
                let d = Vector3::new(delta.cos(), -delta.sin(), 0.0);
                // Long Taylor series of (cos u − 1)/u and sin u / u.
                let (mut a, mut b, mut term_a, mut term_b) = (0.0, 0.0, -u / 2.0, 1.0);
                for n in 1..8 {
                    a += term_a;
                    b += term_b;
                    let m = 2.0 * n as f64;
                    term_a *= -u * u / ((m + 1.0) * (m + 2.0));
                    term_b *= -u * u / (m * (m + 1.0));
                }
                let exact = 30.0 * (a * d + b * Vector3::z());
                assert_abs_diff_eq!(near, exact, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn subdivision_identity() {
        let p = RobotParams::reference();
        for &(theta, delta, q) in &[(0.4, 0.0, 5.0), (1.1, 1.3, 20.0), (2.0, -2.0, 40.0)] {
            let ts = THETA0 + (theta - THETA0) * q / p.length;
            let phi = EquilibriumConfig::from_phi(ts, theta - ts + THETA0);
            let split = pose_from_equilibrium(&p, &phi, delta, q).tip;
            let whole = segment_pose(p.length, theta, delta);
            assert_abs_diff_eq!(split.position, whole.position, epsilon = 1e-9);
            assert_abs_diff_eq!(
                *split.rotation.matrix(),
                *whole.rotation.matrix(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn straight_robot_tip() {
        let p = RobotParams::reference();
        let psi = ConfigState::new(THETA0, 0.5).unwrap();
        for q in [0.0, 10.0, 44.3] {
            let pose = crem_pose(&p, psi, q, &UncertaintyParams::ZERO).unwrap();
            assert_abs_diff_eq!(
                pose.tip.position,
                Vector3::new(0.0, 0.0, 44.3),
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                *pose.tip.rotation.matrix(),
                Matrix3::identity(),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn rigidity_free_emb_matches_single_segment() {
        let p = RobotParams {
            i_emb: 0.0,
            ..RobotParams::reference()
        };
        let theta = 30f64.to_radians();
        let pose = crem_pose(
            &p,
            ConfigState::new(theta, 0.0).unwrap(),
            20.0,
            &UncertaintyParams::ZERO,
        )
        .unwrap();
        let whole = segment_pose(p.length, theta, 0.0);
        assert_abs_diff_eq!(pose.tip.position, whole.position, epsilon = 1e-9);
    }

    #[test]
    fn tips_stay_in_bending_plane() {
        let p = RobotParams::reference();
        let delta = 40f64.to_radians();
        let normal = Vector3::new(delta.sin(), delta.cos(), 0.0);
        let k = UncertaintyParams::new(0.2, 0.0, 0.025);
        for i in 0..=20 {
            let q = 2.0 * i as f64;
            let pose = crem_pose(&p, ConfigState::new(0.6, delta).unwrap(), q, &k).unwrap();
            assert!(pose.tip.position.dot(&normal).abs() < 1e-9);
            assert_rotation_valid(&pose.tip.rotation);
        }
    }

    #[test]
    fn pose_algebra() {
        let a = segment_pose(12.0, 0.7, 0.4);
        let b = segment_pose(8.0, 1.9, -1.1);
        let ab = a.compose(&b);
        let back = a.inverse().compose(&ab);
        assert_abs_diff_eq!(back.position, b.position, epsilon = 1e-12);
        let h = ab.to_homogeneous();
        assert_abs_diff_eq!(h, a.to_homogeneous() * b.to_homogeneous(), epsilon = 1e-12);
        let v = Vector3::new(0.3, -1.0, 2.0);
        let w = Vector3::new(-0.5, 0.2, 0.9);
        assert_abs_diff_eq!(skew(&v) * w, v.cross(&w), epsilon = 1e-15);
    }
}
