//! Gradients of the equilibrium `phi = F_eqm(psi, q_s, k)`.
//!
//! The converged equilibrium satisfies `A (S0 phi − C0) = B` with
//!
//! ```text
//! A = | k1+k2+ks  −k1 |    B = | (k2+ks) θ0 − λ |   S0 = |1 0|   C0 = | 0  |
//!     |   k1      −k1 |        |   k0 (θ0 − θ)  |        |1 1|        | θ0 |
//! ```
//!
//! Differentiating gives `(A S0 − Γ_θs e1ᵀ − Γ_θε e2ᵀ) dphi = Σ_a Γ_a da`
//! with `Γ_a = B'_a − A'_a C_phi`. The stiffnesses depend on `theta_s`
//! through the inserted lengths and on `theta_eps` through the empty lengths,
//! hence the two correction columns.

use nalgebra::{Matrix2, Matrix2x3, RowVector2, Vector2};

use crate::error::{CremError, Result};
use crate::model::{
    projected_offsets, stiffnesses, ConfigState, EquilibriumConfig, RobotParams, UncertaintyParams,
    THETA0,
};

/// Condition number above which the gradient system is treated as singular.
pub const GRADIENT_CONDITION_LIMIT: f64 = 1e12;

const N_VARS: usize = 5;
const THETA: usize = 0;
const DELTA: usize = 1;
const Q_S: usize = 2;
const THETA_S: usize = 3;
const THETA_EPS: usize = 4;

/// A stiffness value with its partials w.r.t. (θ, δ, q_s, θ_s, θ_ε).
#[derive(Debug, Clone, Copy)]
struct Jet {
    value: f64,
    grad: [f64; N_VARS],
}

struct StiffnessJets {
    k0: Jet,
    k1: Jet,
    k2: Jet,
    ks: Jet,
}

fn stiffness_jets(
    params: &RobotParams,
    psi: ConfigState,
    q_s: f64,
    phi: &EquilibriumConfig,
) -> Result<StiffnessJets> {
    // Validates the depth range and the positivity of every length.
    stiffnesses(
        params,
        psi.delta,
        q_s,
        psi.theta,
        phi.theta_s,
        phi.theta_prime,
    )?;

    let l = params.length;
    let ep = params.primary_rigidity();
    let ei = params.secondary_rigidity();
    let beta = params.separation_angle();
    let offsets = projected_offsets(params, psi.delta);
    let bend = psi.theta - THETA0;
    let bend_s = phi.theta_s - THETA0;
    let bend_eps = phi.theta_eps - THETA0;
    let empty_base = l - q_s;

    let mut k0 = Jet {
        value: ep / l,
        grad: [0.0; N_VARS],
    };
    let mut k1 = Jet {
        value: ep / empty_base,
        grad: [0.0; N_VARS],
    };
    let mut k2 = Jet {
        value: ep / q_s,
        grad: [0.0; N_VARS],
    };
    k1.grad[Q_S] = ep / (empty_base * empty_base);
    k2.grad[Q_S] = -ep / (q_s * q_s);

    for (i, &d) in offsets.iter().enumerate() {
        let d_delta = -params.radius * (psi.delta + i as f64 * beta).sin();

        let li = l + d * bend;
        let w = ei / (li * li);
        k0.value += ei / li;
        k0.grad[THETA] -= w * d;
        k0.grad[DELTA] -= w * d_delta * bend;

        let le = empty_base + d * bend_eps;
        let w = ei / (le * le);
        k1.value += ei / le;
        k1.grad[Q_S] += w;
        k1.grad[THETA_EPS] -= w * d;
        k1.grad[DELTA] -= w * d_delta * bend_eps;

        let ls = q_s + d * bend_s;
        let w = ei / (ls * ls);
        k2.value += ei / ls;
        k2.grad[Q_S] -= w;
        k2.grad[THETA_S] -= w * d;
        k2.grad[DELTA] -= w * d_delta * bend_s;
    }

    let es = params.emb_rigidity();
    let mut ks = Jet {
        value: es / q_s,
        grad: [0.0; N_VARS],
    };
    ks.grad[Q_S] = -es / (q_s * q_s);

    Ok(StiffnessJets { k0, k1, k2, ks })
}

/// The matrix form of the converged equilibrium.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverMatrices {
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
    pub s0: Matrix2<f64>,
    pub c0: Vector2<f64>,
    pub s1: RowVector2<f64>,
    /// `S0 phi − C0 = (θ_s, θ')`.
    pub c_phi: Vector2<f64>,
}

impl SolverMatrices {
    /// `A C_phi − B`, zero at a converged equilibrium.
    pub fn residual(&self) -> Vector2<f64> {
        self.a * self.c_phi - self.b
    }
}

fn a_matrix(k1: f64, k2: f64, ks: f64) -> Matrix2<f64> {
    Matrix2::new(k1 + k2 + ks, -k1, k1, -k1)
}

fn s0() -> Matrix2<f64> {
    Matrix2::new(1.0, 0.0, 1.0, 1.0)
}

fn c0() -> Vector2<f64> {
    Vector2::new(0.0, THETA0)
}

pub fn solver_matrices(
    params: &RobotParams,
    psi: ConfigState,
    q_s: f64,
    k: &UncertaintyParams,
    phi: &EquilibriumConfig,
) -> Result<SolverMatrices> {
    let j = stiffness_jets(params, psi, q_s, phi)?;
    let lambda = k.lambda(q_s, psi.theta);
    Ok(SolverMatrices {
        a: a_matrix(j.k1.value, j.k2.value, j.ks.value),
        b: Vector2::new(
            (j.k2.value + j.ks.value) * THETA0 - lambda,
            j.k0.value * (THETA0 - psi.theta),
        ),
        s0: s0(),
        c0: c0(),
        s1: RowVector2::new(1.0, 0.0),
        c_phi: s0() * phi.phi() - c0(),
    })
}

/// Gradients of `phi = (θ_s, θ_ε)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiGradients {
    pub d_theta: Vector2<f64>,
    pub d_delta: Vector2<f64>,
    pub d_qs: Vector2<f64>,
    /// Columns ordered (k0, k_theta, k_q).
    pub d_k: Matrix2x3<f64>,
}

impl PhiGradients {
    /// `[dphi/dθ, dphi/dδ]`.
    pub fn d_psi(&self) -> Matrix2<f64> {
        Matrix2::from_columns(&[self.d_theta, self.d_delta])
    }
}

pub fn phi_gradients(
    params: &RobotParams,
    psi: ConfigState,
    q_s: f64,
    k: &UncertaintyParams,
    phi: &EquilibriumConfig,
) -> Result<PhiGradients> {
    let j = stiffness_jets(params, psi, q_s, phi)?;
    let a = a_matrix(j.k1.value, j.k2.value, j.ks.value);
    let c_phi = s0() * phi.phi() - c0();

    let gamma = |var: usize| -> Vector2<f64> {
        let (g0, g1, g2, gs) = (
            j.k0.grad[var],
            j.k1.grad[var],
            j.k2.grad[var],
            j.ks.grad[var],
        );
        let a_prime = a_matrix(g1, g2, gs);
        let mut lambda_prime = 0.0;
        if var == THETA {
            lambda_prime = k.k_theta;
        } else if var == Q_S {
            lambda_prime = k.k_q;
        }
        let mut b_prime =
            Vector2::new((g2 + gs) * THETA0 - lambda_prime, g0 * (THETA0 - psi.theta));
        if var == THETA {
            b_prime.y -= j.k0.value;
        }
        b_prime - a_prime * c_phi
    };

    let system = a * s0() - Matrix2::from_columns(&[gamma(THETA_S), gamma(THETA_EPS)]);

    let sv = system.singular_values();
    let condition = if sv.min() > 0.0 {
        sv.max() / sv.min()
    } else {
        f64::INFINITY
    };
    if condition.is_nan() || condition > GRADIENT_CONDITION_LIMIT {
        return Err(CremError::SingularGradient { condition });
    }
    let inv = system
        .try_inverse()
        .ok_or(CremError::SingularGradient { condition })?;

    // B'_k: λ enters the first row with coefficients (1, θ, q_s).
    let b_k = Matrix2x3::new(-1.0, -psi.theta, -q_s, 0.0, 0.0, 0.0);
    Ok(PhiGradients {
        d_theta: inv * gamma(THETA),
        d_delta: inv * gamma(DELTA),
        d_qs: inv * gamma(Q_S),
        d_k: inv * b_k,
    })
}
