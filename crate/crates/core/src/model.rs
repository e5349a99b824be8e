//! Domain types and the static-equilibrium solver of a single continuum
//! segment with an equilibrium modulation backbone (EMB) inserted to depth
//! `q_s`.
//!
//! The segment is split at the insertion depth into an *inserted* and an
//! *empty* subsegment, each bending with constant curvature. Two moment
//! conditions close the problem:
//!
//! * the resultant moment carried by the empty subsegment equals the moment
//!   of the uninserted segment at its nominal angle (`m1 = m1'`);
//! * the moments acting on the separation plane balance up to the
//!   uncertainty term `lambda` (`m1' + m2 + ms = lambda`).
//!
//! Every stiffness is `E I / length`, and the backbone lengths depend on the
//! unknown angles, so the solution is a self-consistent fixed point.

use std::f64::consts::{FRAC_PI_2, TAU};

use crate::error::{CremError, Result};

/// Bending angle at the segment base. The straight segment has `theta = THETA0`.
pub const THETA0: f64 = FRAC_PI_2;

/// Insertion depths closer than this fraction of `L` to either end are
/// handled by the analytic limit instead of the `1/q_s` stiffnesses.
pub const Q_MIN_FRACTION: f64 = 1e-6;

/// Geometry and material constants of one continuum segment.
///
/// Lengths in mm, moduli in MPa (N/mm²), second moments of area in mm⁴, so
/// every `E * I` product is in N·mm².
#[derive(Debug, Clone, PartialEq)]
pub struct RobotParams {
    /// Segment (central backbone) length `L`.
    pub length: f64,
    /// Radial offset `r` of the secondary backbones.
    pub radius: f64,
    /// Number of secondary backbones.
    pub n_backbones: usize,
    pub e_primary: f64,
    pub e_secondary: f64,
    pub e_emb: f64,
    /// Stored, never derived from a diameter: the backbones are tubes.
    pub i_primary: f64,
    pub i_secondary: f64,
    pub i_emb: f64,
}

impl RobotParams {
    /// The segment used throughout the simulations and experiments:
    /// L = 44.3 mm, r = 3 mm, NiTi at 41 GPa, I_p = I_i = 0.0312 mm⁴,
    /// I_s = 0.0010 mm⁴, three secondary backbones.
    pub fn reference() -> Self {
        RobotParams {
            length: 44.3,
            radius: 3.0,
            n_backbones: 3,
            e_primary: 41_000.0,
            e_secondary: 41_000.0,
            e_emb: 41_000.0,
            i_primary: 0.0312,
            i_secondary: 0.0312,
            i_emb: 0.0010,
        }
    }

    /// Angular separation between neighbouring secondary backbones, `2π/n`.
    pub fn separation_angle(&self) -> f64 {
        TAU / self.n_backbones as f64
    }

    pub fn primary_rigidity(&self) -> f64 {
        self.e_primary * self.i_primary
    }

    pub fn secondary_rigidity(&self) -> f64 {
        self.e_secondary * self.i_secondary
    }

    pub fn emb_rigidity(&self) -> f64 {
        self.e_emb * self.i_emb
    }

    /// Smallest insertion depth treated with finite stiffnesses.
    pub fn q_min(&self) -> f64 {
        Q_MIN_FRACTION * self.length
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("L", self.length),
            ("r", self.radius),
            ("E_p", self.e_primary),
            ("E_i", self.e_secondary),
            ("I_p", self.i_primary),
            ("I_i", self.i_secondary),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(CremError::InvalidParameter(format!(
                    "{name} must be finite and > 0, got {value}"
                )));
            }
        }
        // A zero-rigidity EMB is a legitimate limiting case (no modulation).
        for (name, value) in [("E_s", self.e_emb), ("I_s", self.i_emb)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(CremError::InvalidParameter(format!(
                    "{name} must be finite and >= 0, got {value}"
                )));
            }
        }
        if self.n_backbones < 3 {
            return Err(CremError::InvalidParameter(format!(
                "n must be at least 3, got {}",
                self.n_backbones
            )));
        }
        Ok(())
    }
}

/// Macro configuration `psi = (theta, delta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfigState {
    /// Nominal end-disk bending angle (rad).
    pub theta: f64,
    /// Bending-plane angle (rad).
    pub delta: f64,
}

impl ConfigState {
    pub fn new(theta: f64, delta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < std::f64::consts::PI) {
            return Err(CremError::InvalidParameter(format!(
                "theta must lie in (0, pi), got {theta}"
            )));
        }
        if !(delta > -std::f64::consts::PI && delta <= std::f64::consts::PI) {
            return Err(CremError::InvalidParameter(format!(
                "delta must lie in (-pi, pi], got {delta}"
            )));
        }
        Ok(ConfigState { theta, delta })
    }

    pub fn from_degrees(theta_deg: f64, delta_deg: f64) -> Result<Self> {
        Self::new(theta_deg.to_radians(), delta_deg.to_radians())
    }
}

/// Coefficients of the affine moment uncertainty
/// `lambda = k0 + k_theta * theta + k_q * q_s` (N·mm).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UncertaintyParams {
    pub k0: f64,
    pub k_theta: f64,
    pub k_q: f64,
}

impl UncertaintyParams {
    pub const ZERO: UncertaintyParams = UncertaintyParams {
        k0: 0.0,
        k_theta: 0.0,
        k_q: 0.0,
    };

    pub fn new(k0: f64, k_theta: f64, k_q: f64) -> Self {
        UncertaintyParams { k0, k_theta, k_q }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.k0, self.k_theta, self.k_q]
    }

    pub fn from_array(k: [f64; 3]) -> Self {
        UncertaintyParams::new(k[0], k[1], k[2])
    }

    /// Evaluates `lambda` at the nominal bending angle.
    pub fn lambda(&self, q_s: f64, theta: f64) -> f64 {
        uncertainty_lambda(self, q_s, theta)
    }
}

pub fn uncertainty_lambda(k: &UncertaintyParams, q_s: f64, theta: f64) -> f64 {
    k.k0 + k.k_theta * theta + k.k_q * q_s
}

/// Solved equilibrium `phi = (theta_s, theta_eps)` plus the end-disk angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumConfig {
    /// Bending angle at the separation plane.
    pub theta_s: f64,
    /// Bending angle of the empty subsegment, `theta' + (π/2 − theta_s)`.
    pub theta_eps: f64,
    /// End-disk angle `theta'`.
    pub theta_prime: f64,
}

impl EquilibriumConfig {
    pub fn from_end_angle(theta_s: f64, theta_prime: f64) -> Self {
        EquilibriumConfig {
            theta_s,
            theta_eps: theta_prime + (FRAC_PI_2 - theta_s),
            theta_prime,
        }
    }

    pub fn from_phi(theta_s: f64, theta_eps: f64) -> Self {
        EquilibriumConfig {
            theta_s,
            theta_eps,
            theta_prime: theta_eps - (FRAC_PI_2 - theta_s),
        }
    }

    pub fn phi(&self) -> nalgebra::Vector2<f64> {
        nalgebra::Vector2::new(self.theta_s, self.theta_eps)
    }
}

/// Angular deflection stiffnesses (N·mm/rad) and the length arrays they were
/// evaluated with.
#[derive(Debug, Clone, PartialEq)]
pub struct StiffnessBundle {
    /// Uninserted segment at the nominal angle.
    pub k_theta0: f64,
    /// Empty subsegment.
    pub k_theta1: f64,
    /// Secondary and central backbones of the inserted subsegment.
    pub k_theta2: f64,
    /// EMB.
    pub k_theta_s: f64,
    pub lengths: Vec<f64>,
    pub inserted_lengths: Vec<f64>,
    pub empty_lengths: Vec<f64>,
    pub offsets: Vec<f64>,
}

/// Projected radial offsets `Δ_i = r cos(δ + (i−1)β)`.
pub fn projected_offsets(params: &RobotParams, delta: f64) -> Vec<f64> {
    let beta = params.separation_angle();
    (0..params.n_backbones)
        .map(|i| params.radius * (delta + i as f64 * beta).cos())
        .collect()
}

fn check_positive(values: &[f64]) -> Result<()> {
    match values.iter().position(|&l| l.is_nan() || l <= 0.0) {
        Some(backbone) => Err(CremError::NonPhysicalLength {
            backbone,
            length: values[backbone],
        }),
        None => Ok(()),
    }
}

/// Secondary backbone lengths `L_i = L + Δ_i (θ − θ0)`.
pub fn backbone_lengths(params: &RobotParams, theta: f64, delta: f64) -> Result<Vec<f64>> {
    let lengths: Vec<f64> = projected_offsets(params, delta)
        .into_iter()
        .map(|d| params.length + d * (theta - THETA0))
        .collect();
    check_positive(&lengths)?;
    Ok(lengths)
}

fn check_insertion(params: &RobotParams, q_s: f64) -> Result<()> {
    if !(q_s >= 0.0 && q_s <= params.length) {
        return Err(CremError::InvalidParameter(format!(
            "insertion depth q_s = {q_s} outside [0, {}]",
            params.length
        )));
    }
    Ok(())
}

/// Inserted and empty portions of each secondary backbone:
/// `L_si = q_s + Δ_i (θ_s − θ0)` and `L_εi = (L − q_s) + Δ_i (θ' − θ_s)`.
///
/// The two sum to `L + Δ_i (θ' − θ0)`, the backbone length at the
/// equilibrium end angle.
pub fn subsegment_lengths(
    params: &RobotParams,
    delta: f64,
    q_s: f64,
    theta_s: f64,
    theta_prime: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_insertion(params, q_s)?;
    let offsets = projected_offsets(params, delta);
    let inserted: Vec<f64> = offsets
        .iter()
        .map(|d| q_s + d * (theta_s - THETA0))
        .collect();
    let empty: Vec<f64> = offsets
        .iter()
        .map(|d| (params.length - q_s) + d * (theta_prime - theta_s))
        .collect();
    // A zero-length portion is fine only when its subsegment is absent.
    for (values, needed) in [(&inserted, q_s > 0.0), (&empty, q_s < params.length)] {
        if let Some(backbone) = values.iter().position(|&l| l < 0.0 || (needed && l <= 0.0)) {
            return Err(CremError::NonPhysicalLength {
                backbone,
                length: values[backbone],
            });
        }
    }
    Ok((inserted, empty))
}

/// Stiffnesses evaluated with an explicit empty-subsegment base length, which
/// the solver clamps near full insertion.
pub(crate) fn stiffness_bundle(
    params: &RobotParams,
    delta: f64,
    q_s: f64,
    empty_base: f64,
    theta: f64,
    theta_s: f64,
    theta_prime: f64,
) -> Result<StiffnessBundle> {
    let offsets = projected_offsets(params, delta);
    let lengths: Vec<f64> = offsets
        .iter()
        .map(|d| params.length + d * (theta - THETA0))
        .collect();
    let inserted: Vec<f64> = offsets
        .iter()
        .map(|d| q_s + d * (theta_s - THETA0))
        .collect();
    let empty: Vec<f64> = offsets
        .iter()
        .map(|d| empty_base + d * (theta_prime - theta_s))
        .collect();
    check_positive(&lengths)?;
    check_positive(&inserted)?;
    check_positive(&empty)?;

    let ep = params.primary_rigidity();
    let ei = params.secondary_rigidity();
    let sum_inv = |ls: &[f64]| ls.iter().map(|l| ei / l).sum::<f64>();
    Ok(StiffnessBundle {
        k_theta0: ep / params.length + sum_inv(&lengths),
        k_theta1: ep / empty_base + sum_inv(&empty),
        k_theta2: ep / q_s + sum_inv(&inserted),
        k_theta_s: params.emb_rigidity() / q_s,
        lengths,
        inserted_lengths: inserted,
        empty_lengths: empty,
        offsets,
    })
}

/// Angular deflection stiffnesses at a given equilibrium guess.
///
/// Only defined strictly inside the segment: the inserted-side stiffnesses
/// diverge as `1/q_s` and the empty side as `1/(L − q_s)`.
pub fn stiffnesses(
    params: &RobotParams,
    delta: f64,
    q_s: f64,
    theta: f64,
    theta_s: f64,
    theta_prime: f64,
) -> Result<StiffnessBundle> {
    let q_min = params.q_min();
    if !(q_s > q_min && q_s < params.length - q_min) {
        return Err(CremError::SingularInsertion { q_s });
    }
    stiffness_bundle(
        params,
        delta,
        q_s,
        params.length - q_s,
        theta,
        theta_s,
        theta_prime,
    )
}

/// Options of the equilibrium fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Convergence threshold on the largest angle update (rad).
    pub tolerance: f64,
    pub max_iter: usize,
    /// Relaxation factor in (0, 1]; 1 applies the closed-form update fully.
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-12,
            max_iter: 200,
            damping: 1.0,
        }
    }
}

/// Solves the equilibrium `phi = F_eqm(psi, q_s, k)` with default options.
pub fn solve_equilibrium(
    params: &RobotParams,
    psi: ConfigState,
    q_s: f64,
    k: &UncertaintyParams,
) -> Result<EquilibriumConfig> {
    solve_equilibrium_with(params, psi, q_s, k, &SolverOptions::default())
}

/// Fixed-point solve of the two moment conditions.
///
/// Each iteration freezes the stiffnesses at the current angles and solves
/// the resulting linear pair exactly:
/// `θ_s = θ0 + (k0 (θ − θ0) − λ) / (k2 + ks)` and
/// `θ' = θ_s + (k0 / k1)(θ − θ0)`.
/// The iteration starts from the constant-curvature split, which is already
/// the solution when the EMB has no rigidity and `λ = 0`.
///
/// Once the update falls below the tolerance a few extra sweeps are run while
/// the step keeps shrinking, so the returned angles sit at machine precision
/// (finite-difference checks of the Jacobians depend on it).
pub fn solve_equilibrium_with(
    params: &RobotParams,
    psi: ConfigState,
    q_s: f64,
    k: &UncertaintyParams,
    options: &SolverOptions,
) -> Result<EquilibriumConfig> {
    params.validate()?;
    check_insertion(params, q_s)?;
    if !(psi.theta.is_finite() && psi.delta.is_finite()) {
        return Err(CremError::InvalidParameter(
            "configuration angles must be finite".into(),
        ));
    }
    let theta = psi.theta;
    let delta = psi.delta;
    // Nominal lengths must be physical regardless of insertion.
    backbone_lengths(params, theta, delta)?;

    let q_min = params.q_min();
    if q_s < q_min {
        return Ok(EquilibriumConfig::from_end_angle(THETA0, theta));
    }
    let full = params.length - q_s < q_min;
    let empty_base = (params.length - q_s).max(q_min);
    let lambda = k.lambda(q_s, theta);
    let bend = theta - THETA0;

    let mut theta_s = THETA0 + bend * q_s / params.length;
    let mut theta_prime = theta;
    let mut last_step = f64::INFINITY;
    let mut polish = 0;
    for _ in 0..options.max_iter {
        let s = stiffness_bundle(params, delta, q_s, empty_base, theta, theta_s, theta_prime)?;
        let ts_new = THETA0 + (s.k_theta0 * bend - lambda) / (s.k_theta2 + s.k_theta_s);
        // A vanishing empty subsegment is infinitely stiff: it carries no bend.
        let tp_new = if full {
            ts_new
        } else {
            ts_new + s.k_theta0 / s.k_theta1 * bend
        };
        let d_s = options.damping * (ts_new - theta_s);
        let d_p = options.damping * (tp_new - theta_prime);
        theta_s += d_s;
        theta_prime += d_p;
        let step = d_s.abs().max(d_p.abs());
        if !step.is_finite() {
            break;
        }
        if step < options.tolerance {
            if step == 0.0 || step >= last_step || polish >= 4 {
                return Ok(EquilibriumConfig::from_end_angle(theta_s, theta_prime));
            }
            polish += 1;
        }
        last_step = step;
    }
    if last_step < options.tolerance {
        return Ok(EquilibriumConfig::from_end_angle(theta_s, theta_prime));
    }
    Err(CremError::NoConvergence {
        iterations: options.max_iter,
        last_step,
    })
}

/// Moment residuals at an equilibrium candidate, with every stiffness
/// evaluated at that candidate: `(m1' + m2 + ms − λ, m1 − m1')`.
pub fn moment_residuals(
    params: &RobotParams,
    psi: ConfigState,
    q_s: f64,
    k: &UncertaintyParams,
    phi: &EquilibriumConfig,
) -> Result<(f64, f64)> {
    let s = stiffnesses(
        params,
        psi.delta,
        q_s,
        psi.theta,
        phi.theta_s,
        phi.theta_prime,
    )?;
    let m1 = s.k_theta0 * (psi.theta - THETA0);
    let m1p = s.k_theta1 * (phi.theta_prime - phi.theta_s);
    let m2 = -s.k_theta2 * (phi.theta_s - THETA0);
    let ms = -s.k_theta_s * (phi.theta_s - THETA0);
    Ok((m1p + m2 + ms - k.lambda(q_s, psi.theta), m1 - m1p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn offsets_at_zero_and_quarter_turn() {
        let p = RobotParams::reference();
        let d = projected_offsets(&p, 0.0);
        assert_abs_diff_eq!(d[0], 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], -1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(d[2], -1.5, epsilon = 1e-14);

        let d = projected_offsets(&p, PI / 2.0);
        assert_abs_diff_eq!(d[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], -3.0 * (2.0 * PI / 3.0).sin(), epsilon = 1e-14);
        assert_abs_diff_eq!(d[1], -2.598076211353316, epsilon = 1e-12);
        assert_abs_diff_eq!(d[2], 2.598076211353316, epsilon = 1e-12);

        let p0 = RobotParams { radius: 0.0, ..p };
        assert!(projected_offsets(&p0, 1.234).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn separation_angle_is_two_pi_over_n() {
        let p = RobotParams::reference();
        assert_eq!(p.separation_angle(), 2.0 * PI / 3.0);
        let p4 = RobotParams {
            n_backbones: 4,
            ..p
        };
        assert_eq!(p4.separation_angle(), PI / 2.0);
    }

    #[test]
    fn backbone_lengths_cases() {
        let p = RobotParams::reference();
        for delta in [0.0, 0.7, -2.0] {
            let l = backbone_lengths(&p, THETA0, delta).unwrap();
            assert!(l.iter().all(|&x| x == p.length));
        }
        let l = backbone_lengths(&p, 30f64.to_radians(), 0.0).unwrap();
        assert_abs_diff_eq!(l[0], 44.3 + 3.0 * (PI / 6.0 - PI / 2.0), epsilon = 1e-12);
        assert_abs_diff_eq!(l[0], 41.15840734641021, epsilon = 1e-9);
        assert_abs_diff_eq!(l[1], l[2], epsilon = 1e-12);

        let err = backbone_lengths(&p, THETA0 - 20.0, 0.0).unwrap_err();
        assert!(matches!(
            err,
            CremError::NonPhysicalLength { backbone: 0, .. }
        ));
    }

    #[test]
    fn subsegment_length_cases() {
        let p = RobotParams::reference();
        let (ins, emp) = subsegment_lengths(&p, 0.3, 0.0, THETA0, 1.1).unwrap();
        let offs = projected_offsets(&p, 0.3);
        for i in 0..3 {
            assert_eq!(ins[i], 0.0);
            assert_abs_diff_eq!(emp[i], p.length + offs[i] * (1.1 - THETA0), epsilon = 1e-12);
        }

        let (ins, emp) = subsegment_lengths(&p, 0.3, p.length, 1.2, 1.2).unwrap();
        for i in 0..3 {
            assert_eq!(emp[i], 0.0);
            assert_abs_diff_eq!(ins[i], p.length + offs[i] * (1.2 - THETA0), epsilon = 1e-12);
        }

        let (ins, emp) = subsegment_lengths(&p, 0.0, 20.0, 1.2, 1.1).unwrap();
        assert_abs_diff_eq!(ins[0], 20.0 + 3.0 * (1.2 - PI / 2.0), epsilon = 1e-12);
        assert_abs_diff_eq!(ins[0], 18.888, epsilon = 1e-3);
        assert_abs_diff_eq!(emp[0], 24.0, epsilon = 1e-12);
    }

    #[test]
    fn subsegment_lengths_sum_to_length_at_end_angle() {
        let p = RobotParams::reference();
        let (delta, q_s, ts, tp) = (0.4, 17.0, 1.3, 1.05);
        let (ins, emp) = subsegment_lengths(&p, delta, q_s, ts, tp).unwrap();
        let at_end = backbone_lengths(&p, tp, delta).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(ins[i] + emp[i], at_end[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn subsegment_lengths_reject_out_of_range_depth() {
        let p = RobotParams::reference();
        assert!(subsegment_lengths(&p, 0.0, -1.0, 1.0, 1.0).is_err());
        assert!(subsegment_lengths(&p, 0.0, 50.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn straight_stiffnesses() {
        let p = RobotParams::reference();
        let s = stiffnesses(&p, 0.0, 22.15, THETA0, THETA0, THETA0).unwrap();
        assert_abs_diff_eq!(s.k_theta0, 41000.0 * 0.0312 * 4.0 / 44.3, epsilon = 1e-10);
        assert_abs_diff_eq!(s.k_theta0, 115.503386, epsilon = 1e-6);
        assert_abs_diff_eq!(s.k_theta_s, 41000.0 * 0.0010 / 22.15, epsilon = 1e-12);
        assert_abs_diff_eq!(s.k_theta_s, 1.851, epsilon = 1e-3);
        // Halved segment: both subsegment stiffnesses double.
        assert_abs_diff_eq!(s.k_theta1, 2.0 * s.k_theta0, epsilon = 1e-10);
        assert_abs_diff_eq!(s.k_theta2, 2.0 * s.k_theta0, epsilon = 1e-10);
    }

    #[test]
    fn stiffness_singular_near_ends() {
        let p = RobotParams::reference();
        for q in [0.0, 1e-9, p.length, p.length - 1e-9] {
            let err = stiffnesses(&p, 0.0, q, 1.0, 1.2, 1.1).unwrap_err();
            assert!(matches!(err, CremError::SingularInsertion { .. }));
        }
    }

    #[test]
    fn lambda_cases() {
        assert_eq!(uncertainty_lambda(&UncertaintyParams::ZERO, 12.0, 0.3), 0.0);
        let k = UncertaintyParams::new(0.2, 0.0, 0.025);
        assert_abs_diff_eq!(k.lambda(10.0, 1.7), 0.45, epsilon = 1e-15);
        assert_eq!(UncertaintyParams::new(1.0, 1.0, 1.0).lambda(2.0, 3.0), 6.0);
    }

    #[test]
    fn straight_segment_stays_straight() {
        let p = RobotParams::reference();
        for q in [1e-8, 0.5, 20.0, 44.0, 44.3] {
            let phi = solve_equilibrium(
                &p,
                ConfigState::new(THETA0, 0.4).unwrap(),
                q,
                &UncertaintyParams::ZERO,
            )
            .unwrap();
            assert_eq!(phi.theta_s, THETA0);
            assert_eq!(phi.theta_prime, THETA0);
            assert_eq!(phi.theta_eps, THETA0);
        }
    }

    #[test]
    fn emb_insertion_straightens_the_robot() {
        let p = RobotParams::reference();
        let theta = 30f64.to_radians();
        let phi = solve_equilibrium(
            &p,
            ConfigState::new(theta, 0.0).unwrap(),
            20.0,
            &UncertaintyParams::ZERO,
        )
        .unwrap();
        assert!(phi.theta_prime > theta && phi.theta_prime < THETA0);
        let (balance, coupling) = moment_residuals(
            &p,
            ConfigState::new(theta, 0.0).unwrap(),
            20.0,
            &UncertaintyParams::ZERO,
            &phi,
        )
        .unwrap();
        assert!(balance.abs() < 1e-9 && coupling.abs() < 1e-9);
    }

    #[test]
    fn rigidity_free_emb_gives_constant_curvature() {
        let p = RobotParams {
            i_emb: 0.0,
            ..RobotParams::reference()
        };
        let theta = 50f64.to_radians();
        let psi = ConfigState::new(theta, 0.3).unwrap();
        let phi = solve_equilibrium(&p, psi, 12.0, &UncertaintyParams::ZERO).unwrap();
        assert_abs_diff_eq!(phi.theta_prime, theta, epsilon = 1e-12);
        assert_abs_diff_eq!(
            phi.theta_s,
            THETA0 + (theta - THETA0) * 12.0 / p.length,
            epsilon = 1e-12
        );
    }

    #[test]
    fn theta_eps_identity() {
        let p = RobotParams::reference();
        let psi = ConfigState::new(0.8, -1.0).unwrap();
        let phi =
            solve_equilibrium(&p, psi, 30.0, &UncertaintyParams::new(0.2, 0.0, 0.025)).unwrap();
        assert_abs_diff_eq!(
            phi.theta_eps,
            phi.theta_prime + (PI / 2.0 - phi.theta_s),
            epsilon = 1e-15
        );
    }

    #[test]
    fn boundary_depths_use_limits() {
        let p = RobotParams::reference();
        let psi = ConfigState::new(0.7, 0.0).unwrap();
        let k = UncertaintyParams::new(0.2, 0.0, 0.025);
        let phi = solve_equilibrium(&p, psi, 0.0, &k).unwrap();
        assert_eq!((phi.theta_s, phi.theta_prime), (THETA0, 0.7));
        let full = solve_equilibrium(&p, psi, p.length, &k).unwrap();
        assert!(full.theta_prime.is_finite());
        assert_abs_diff_eq!(full.theta_prime, full.theta_s, epsilon = 1e-4);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let p = RobotParams::reference();
        let psi = ConfigState::new(0.7, 0.0).unwrap();
        assert!(solve_equilibrium(&p, psi, -0.1, &UncertaintyParams::ZERO).is_err());
        assert!(solve_equilibrium(&p, psi, 45.0, &UncertaintyParams::ZERO).is_err());
        assert!(ConfigState::new(0.0, 0.0).is_err());
        assert!(ConfigState::new(1.0, -PI).is_err());
        let bad = RobotParams {
            length: -1.0,
            ..RobotParams::reference()
        };
        assert!(bad.validate().is_err());
        let two = RobotParams {
            n_backbones: 2,
            ..RobotParams::reference()
        };
        assert!(two.validate().is_err());
    }

    #[test]
    fn max_iter_exhaustion_reports_no_convergence() {
        let p = RobotParams::reference();
        let psi = ConfigState::new(0.5, 0.0).unwrap();
        let opts = SolverOptions {
            max_iter: 1,
            ..SolverOptions::default()
        };
        let err = solve_equilibrium_with(
            &p,
            psi,
            20.0,
            &UncertaintyParams::new(0.2, 0.0, 0.025),
            &opts,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            CremError::NoConvergence { iterations: 1, .. }
        ));
    }
}
