//! Analytic Jacobians of the equilibrium and of the end-disk pose.
//!
//! The pose differential decomposes as `dξ = J_M dq + J_μ dq_s + J_k dk`,
//! with `dq` the backbone push-pull displacements.

mod check;
mod equilibrium;
mod finite_diff;
mod partitions;

pub use check::{check_grid, check_point, GridSpec, JacobianErrors};
pub use equilibrium::{
    phi_gradients, solver_matrices, PhiGradients, SolverMatrices, GRADIENT_CONDITION_LIMIT,
};
pub use finite_diff::{
    finite_difference_jacobian, finite_difference_vector, relative_error, FD_SCALE_FLOOR, FD_STEP,
};
pub use partitions::{
    assemble_xi_jacobians, chi_a, chi_b, chi_c, jacobian_partitions, Partitions, XiJacobians,
};

use nalgebra::{DMatrix, Matrix6x2, Matrix6x3, Vector6};

use crate::error::Result;
use crate::kinematics::{crem_pose, CremPose};
use crate::model::{ConfigState, RobotParams, UncertaintyParams, THETA0};

/// `∂q/∂ψ` (n×2): rows `r [cos σi, (θ0 − θ) sin σi]`, `σi = δ + (i−1)β`.
pub fn j_q_psi(params: &RobotParams, psi: ConfigState) -> DMatrix<f64> {
    let beta = params.separation_angle();
    DMatrix::from_fn(params.n_backbones, 2, |i, j| {
        let sigma = psi.delta + i as f64 * beta;
        if j == 0 {
            params.radius * sigma.cos()
        } else {
            params.radius * (THETA0 - psi.theta) * sigma.sin()
        }
    })
}

/// Minimum-norm pseudo-inverse; singular values below `max(m,n)·ε·σ_max`
/// are dropped.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let tol = m.nrows().max(m.ncols()) as f64 * f64::EPSILON * svd.singular_values.max();
    svd.pseudo_inverse(tol).expect("both factors were computed")
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianSet {
    /// Macro motion Jacobian, 6×n.
    pub j_m: DMatrix<f64>,
    /// Micro motion Jacobian.
    pub j_mu: Vector6<f64>,
    /// Identification Jacobian, columns (k0, k_theta, k_q).
    pub j_k: Matrix6x3<f64>,
    pub j_xi_phi: Matrix6x2<f64>,
    pub j_xi_delta: Vector6<f64>,
    pub j_xi_qs: Vector6<f64>,
    /// Total pose Jacobian w.r.t. `(θ, δ)`.
    pub j_xi_psi: Matrix6x2<f64>,
    pub j_q_psi: DMatrix<f64>,
    pub phi: PhiGradients,
    pub pose: CremPose,
}

pub fn assemble_motion_jacobians(
    params: &RobotParams,
    psi: ConfigState,
    q_s: f64,
    k: &UncertaintyParams,
) -> Result<JacobianSet> {
    let pose = crem_pose(params, psi, q_s, k)?;
    let grads = phi_gradients(params, psi, q_s, k, &pose.equilibrium)?;
    let xi = assemble_xi_jacobians(&pose, params.length, q_s, psi.delta);

    let j_xi_psi =
        Matrix6x2::from_columns(&[xi.phi * grads.d_theta, xi.phi * grads.d_delta + xi.delta]);
    let jq = j_q_psi(params, psi);
    let j_m = DMatrix::from_column_slice(6, 2, j_xi_psi.as_slice()) * pinv(&jq);

    Ok(JacobianSet {
        j_m,
        j_mu: xi.phi * grads.d_qs + xi.q_s,
        j_k: xi.phi * grads.d_k,
        j_xi_phi: xi.phi,
        j_xi_delta: xi.delta,
        j_xi_qs: xi.q_s,
        j_xi_psi,
        j_q_psi: jq,
        phi: grads,
        pose,
    })
}
