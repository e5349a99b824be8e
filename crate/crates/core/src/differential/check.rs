//! Analytic-versus-finite-difference comparison over configurations.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::finite_diff::{finite_difference_jacobian, finite_difference_vector, relative_error};
use super::{assemble_motion_jacobians, JacobianSet};
use crate::error::Result;
use crate::kinematics::{crem_pose, pose_from_equilibrium};
use crate::model::{
    solve_equilibrium, ConfigState, EquilibriumConfig, RobotParams, UncertaintyParams,
};

/// Relative FD error of each Jacobian at one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JacobianErrors {
    pub phi_theta: f64,
    pub phi_delta: f64,
    pub phi_qs: f64,
    pub phi_k: f64,
    pub xi_phi: f64,
    pub xi_delta: f64,
    pub xi_qs: f64,
    pub j_m: f64,
    pub j_mu: f64,
    pub j_k: f64,
}

impl JacobianErrors {
    pub const NAMES: [&'static str; 10] = [
        "phi_theta",
        "phi_delta",
        "phi_qs",
        "phi_k",
        "xi_phi",
        "xi_delta",
        "xi_qs",
        "j_m",
        "j_mu",
        "j_k",
    ];

    pub fn values(&self) -> [f64; 10] {
        [
            self.phi_theta,
            self.phi_delta,
            self.phi_qs,
            self.phi_k,
            self.xi_phi,
            self.xi_delta,
            self.xi_qs,
            self.j_m,
            self.j_mu,
            self.j_k,
        ]
    }

    pub fn max(&self) -> f64 {
        self.values().into_iter().fold(0.0, f64::max)
    }
}

fn dm<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

fn phi_vec(phi: &EquilibriumConfig) -> DVector<f64> {
    DVector::from_vec(vec![phi.theta_s, phi.theta_eps])
}

/// Compares every analytic Jacobian at `(psi, q_s, k)` with central
/// differences of step `h`. `floor` bounds the reference scale from below
/// when computing relative errors.
pub fn check_point(
    params: &RobotParams,
    psi: ConfigState,
    q_s: f64,
    k: &UncertaintyParams,
    h: f64,
    floor: f64,
) -> Result<(JacobianSet, JacobianErrors)> {
    let set = assemble_motion_jacobians(params, psi, q_s, k)?;
    let phi0 = set.pose.equilibrium;
    let kv = DVector::from_vec(k.to_array().to_vec());

    let solve_psi = |x: &DVector<f64>| -> Result<EquilibriumConfig> {
        solve_equilibrium(
            params,
            ConfigState {
                theta: x[0],
                delta: x[1],
            },
            q_s,
            k,
        )
    };
    let at_psi = DVector::from_vec(vec![psi.theta, psi.delta]);

    let fd_phi_psi = finite_difference_vector(|x| Ok(phi_vec(&solve_psi(x)?)), &at_psi, h)?;
    let fd_phi_qs = finite_difference_vector(
        |x| Ok(phi_vec(&solve_equilibrium(params, psi, x[0], k)?)),
        &DVector::from_element(1, q_s),
        h,
    )?;
    let fd_phi_k = finite_difference_vector(
        |x| {
            let kk = UncertaintyParams::new(x[0], x[1], x[2]);
            Ok(phi_vec(&solve_equilibrium(params, psi, q_s, &kk)?))
        },
        &kv,
        h,
    )?;

    let fd_xi_phi = finite_difference_jacobian(
        |x| {
            Ok(pose_from_equilibrium(
                params,
                &EquilibriumConfig::from_phi(x[0], x[1]),
                psi.delta,
                q_s,
            )
            .tip)
        },
        &phi_vec(&phi0),
        h,
    )?;
    let fd_xi_delta = finite_difference_jacobian(
        |x| Ok(pose_from_equilibrium(params, &phi0, x[0], q_s).tip),
        &DVector::from_element(1, psi.delta),
        h,
    )?;
    let fd_xi_qs = finite_difference_jacobian(
        |x| Ok(pose_from_equilibrium(params, &phi0, psi.delta, x[0]).tip),
        &DVector::from_element(1, q_s),
        h,
    )?;

    let fd_psi = finite_difference_jacobian(
        |x| {
            Ok(crem_pose(
                params,
                ConfigState {
                    theta: x[0],
                    delta: x[1],
                },
                q_s,
                k,
            )?
            .tip)
        },
        &at_psi,
        h,
    )?;
    let fd_mu = finite_difference_jacobian(
        |x| Ok(crem_pose(params, psi, x[0], k)?.tip),
        &DVector::from_element(1, q_s),
        h,
    )?;
    let fd_k = finite_difference_jacobian(
        |x| Ok(crem_pose(params, psi, q_s, &UncertaintyParams::new(x[0], x[1], x[2]))?.tip),
        &kv,
        h,
    )?;

    let g = &set.phi;
    let err = |a: DMatrix<f64>, n: &DMatrix<f64>| relative_error(&a, n, floor);
    let errors = JacobianErrors {
        phi_theta: err(dm(&g.d_theta), &fd_phi_psi.columns(0, 1).into_owned()),
        phi_delta: err(dm(&g.d_delta), &fd_phi_psi.columns(1, 1).into_owned()),
        phi_qs: err(dm(&g.d_qs), &fd_phi_qs),
        phi_k: err(dm(&g.d_k), &fd_phi_k),
        xi_phi: err(dm(&set.j_xi_phi), &fd_xi_phi),
        xi_delta: err(dm(&set.j_xi_delta), &fd_xi_delta),
        xi_qs: err(dm(&set.j_xi_qs), &fd_xi_qs),
        // J_M acts on dq = J_qψ dψ, so J_M J_qψ must reproduce ∂ξ/∂ψ.
        j_m: err(&set.j_m * &set.j_q_psi, &fd_psi),
        j_mu: err(dm(&set.j_mu), &fd_mu),
        j_k: err(dm(&set.j_k), &fd_k),
    };
    Ok((set, errors))
}

/// Grid of configurations for Jacobian checks; `q_s` given as fractions of L.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub theta: Vec<f64>,
    pub delta: Vec<f64>,
    pub qs_frac: Vec<f64>,
}

impl GridSpec {
    /// θ ∈ {15,30,45,60,75}°, δ ∈ {0,20,40,65,90}°, q_s ∈ {0.1,…,0.9}·L.
    pub fn standard() -> Self {
        GridSpec {
            theta: [15.0f64, 30.0, 45.0, 60.0, 75.0]
                .iter()
                .map(|d| d.to_radians())
                .collect(),
            delta: [0.0f64, 20.0, 40.0, 65.0, 90.0]
                .iter()
                .map(|d| d.to_radians())
                .collect(),
            qs_frac: (0..5).map(|i| 0.1 + 0.2 * i as f64).collect(),
        }
    }

    pub fn points(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for &t in &self.theta {
            for &d in &self.delta {
                for &q in &self.qs_frac {
                    out.push((t, d, q));
                }
            }
        }
        out
    }
}

/// Runs [`check_point`] over the grid in parallel; results keep grid order.
/// Each entry is `(θ, δ, q_s, errors)`.
pub fn check_grid(
    params: &RobotParams,
    grid: &GridSpec,
    k: &UncertaintyParams,
    h: f64,
    floor: f64,
) -> Result<Vec<(f64, f64, f64, JacobianErrors)>> {
    grid.points()
        .into_par_iter()
        .enumerate()
        .map(|(i, (t, d, frac))| {
            let q = frac * params.length;
            let psi = ConfigState::new(t, d).map_err(|e| e.at(i))?;
            let (_, e) = check_point(params, psi, q, k, h, floor).map_err(|e| e.at(i))?;
            Ok((t, d, q, e))
        })
        .collect()
}
