//! Identification of the uncertainty parameters from measured tip poses.
//!
//! Residuals, the weighted objective `M = c̃ᵀ W c̃ / 2N`, the stacked
//! identification Jacobian and the damped Gauss-Newton iteration
//! `k ← k − H η (JᵀWJ)⁻¹ JᵀW c̃`.

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3, Vector6};
use rayon::prelude::*;

use crate::differential::{assemble_motion_jacobians, finite_difference_jacobian, FD_STEP};
use crate::error::{CremError, Result};
use crate::kinematics::{crem_pose, skew, Pose};
use crate::model::{ConfigState, RobotParams, UncertaintyParams};
use crate::rotation::log_map;

/// Condition number of `JᵀWJ` above which the update is refused.
pub const NORMAL_CONDITION_LIMIT: f64 = 1e12;

/// One measured configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub psi: ConfigState,
    pub q_s: f64,
    /// Measured marker position in the base frame (mm).
    pub position: Vector3<f64>,
    /// Measured end-disk orientation in the base frame, if available.
    pub rotation: Option<Rotation3<f64>>,
    /// Observed residual components `[x, y, z, rx, ry, rz]`; the position
    /// entries refer to the axes of `frame`.
    pub obs_mask: [bool; 6],
    /// Orientation of the observation frame in the base frame. Position
    /// residuals are expressed in this frame before masking, so a 2-D image
    /// measurement masks the image depth axis.
    pub frame: Rotation3<f64>,
}

impl Measurement {
    /// A full 3-D position measurement in the base frame.
    pub fn position_only(psi: ConfigState, q_s: f64, position: Vector3<f64>) -> Self {
        Measurement {
            psi,
            q_s,
            position,
            rotation: None,
            obs_mask: [true, true, true, false, false, false],
            frame: Rotation3::identity(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.obs_mask.iter().any(|&m| m) {
            return Err(CremError::InvalidParameter(
                "measurement observes no residual component".into(),
            ));
        }
        if !self.position.iter().all(|v| v.is_finite()) || !self.q_s.is_finite() {
            return Err(CremError::InvalidParameter(
                "measurement is not finite".into(),
            ));
        }
        if self.rotation.is_none() && self.obs_mask[3..].iter().any(|&m| m) {
            return Err(CremError::InvalidParameter(
                "rotation components observed without a measured rotation".into(),
            ));
        }
        Ok(())
    }
}

/// Which of `(k0, k_theta, k_q)` are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeParams(pub [bool; 3]);

impl FreeParams {
    pub const DEFAULT: FreeParams = FreeParams([true, false, true]);

    pub fn indices(&self) -> Vec<usize> {
        (0..3).filter(|&i| self.0[i]).collect()
    }

    /// Parses a comma list of `k0`, `ktheta`, `kq`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut mask = [false; 3];
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            let i = match name {
                "k0" => 0,
                "ktheta" | "kt" => 1,
                "kq" => 2,
                other => {
                    return Err(CremError::InvalidParameter(format!(
                        "unknown parameter `{other}` (expected k0, ktheta, kq)"
                    )))
                }
            };
            mask[i] = true;
        }
        if !mask.iter().any(|&m| m) {
            return Err(CremError::InvalidParameter("no free parameter".into()));
        }
        Ok(FreeParams(mask))
    }
}

impl Default for FreeParams {
    fn default() -> Self {
        FreeParams::DEFAULT
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    /// Step size in (0, 1].
    pub eta: f64,
    /// Relative change of the objective below which the iteration stops.
    pub beta_conv: f64,
    /// The iteration also stops once the objective drops to this value.
    pub objective_floor: f64,
    pub max_iter: usize,
    pub free: FreeParams,
    /// Diagonal of the parameter scaling matrix H.
    pub h_diag: Vector3<f64>,
    /// Weight of observed position components (mm⁻²).
    pub w_pos: f64,
    /// Weight of observed rotation components.
    pub w_rot: f64,
    /// Marker position in the end-disk frame (mm).
    pub marker_offset: Vector3<f64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            eta: 0.1,
            beta_conv: 1e-3,
            objective_floor: 1e-20,
            max_iter: 500,
            free: FreeParams::DEFAULT,
            h_diag: Vector3::new(1.0, 1.0, 1.0),
            w_pos: 1.0,
            w_rot: 10.0,
            marker_offset: Vector3::zeros(),
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(CremError::InvalidParameter(format!(
                "step size {} outside (0, 1]",
                self.eta
            )));
        }
        if self.beta_conv.is_nan() || self.beta_conv <= 0.0 {
            return Err(CremError::InvalidParameter(
                "convergence threshold must be positive".into(),
            ));
        }
        if !self.h_diag.iter().all(|&h| h > 0.0) {
            return Err(CremError::InvalidParameter(
                "H must be positive definite".into(),
            ));
        }
        if !(self.w_pos >= 0.0 && self.w_rot >= 0.0) {
            return Err(CremError::InvalidParameter(
                "weights must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Diagonal of the 6×6 weight block of a measurement.
    pub fn weights(&self, m: &Measurement) -> Vector6<f64> {
        Vector6::from_fn(|i, _| {
            if !m.obs_mask[i] {
                0.0
            } else if i < 3 {
                self.w_pos
            } else {
                self.w_rot
            }
        })
    }
}

/// `c_j = [x̄ − x; α m̂]` with `R̄ Rᵀ = exp(α [m̂]^)`. The position part is
/// expressed in the observation frame and unobserved entries are zero.
pub fn pose_error(measured: &Measurement, modeled: &Pose) -> Vector6<f64> {
    let dx = measured.frame.inverse() * (measured.position - modeled.position);
    let dr = match &measured.rotation {
        Some(r) => log_map(&(r * modeled.rotation.inverse())),
        None => Vector3::zeros(),
    };
    Vector6::from_fn(|i, _| {
        if !measured.obs_mask[i] {
            0.0
        } else if i < 3 {
            dx[i]
        } else {
            dr[i - 3]
        }
    })
}

/// Stacked residual `c̃` and objective `M = c̃ᵀ W c̃ / 2N` for a diagonal W.
pub fn aggregate(residuals: &[Vector6<f64>], weights: &[Vector6<f64>]) -> (DVector<f64>, f64) {
    assert_eq!(residuals.len(), weights.len());
    let n = residuals.len();
    let c = DVector::from_iterator(6 * n, residuals.iter().flat_map(|r| r.iter().copied()));
    let weighted: f64 = residuals
        .iter()
        .zip(weights)
        .map(|(r, w)| r.component_mul(r).dot(w))
        .sum();
    (c, weighted / (2.0 * n as f64))
}

/// Position RMSE in μm over the observed position components.
pub fn position_rmse_um(residuals: &[Vector6<f64>]) -> f64 {
    let sum: f64 = residuals
        .iter()
        .map(|r| r.fixed_rows::<3>(0).norm_squared())
        .sum();
    (sum / residuals.len() as f64).sqrt() * 1000.0
}

/// Model pose of the marker: tip pose with the marker offset applied.
fn marker_pose(tip: &Pose, offset: &Vector3<f64>) -> Pose {
    Pose::new(tip.transform_point(offset), tip.rotation)
}

/// Residual and 6×3 `∂c/∂k` of one measurement.
fn residual_and_jacobian(
    m: &Measurement,
    params: &RobotParams,
    k: &UncertaintyParams,
    offset: &Vector3<f64>,
) -> Result<(Vector6<f64>, DMatrix<f64>)> {
    let pose_at = |kk: &UncertaintyParams| -> Result<Pose> {
        Ok(marker_pose(
            &crem_pose(params, m.psi, m.q_s, kk)?.tip,
            offset,
        ))
    };
    let q_min = params.q_min();
    let interior = m.q_s > q_min && m.q_s < params.length - q_min;

    let (pose, j_k) = if interior {
        let set = assemble_motion_jacobians(params, m.psi, m.q_s, k)?;
        let tip = set.pose.tip;
        let arm = tip.rotation * offset;
        let mut jk = DMatrix::from_column_slice(6, 3, set.j_k.as_slice());
        // Velocity of the marker point: v + ω × (R t).
        let w = jk.rows(3, 3).into_owned();
        let v = jk.rows(0, 3) - skew(&arm) * &w;
        jk.rows_mut(0, 3).copy_from(&v);
        (marker_pose(&tip, offset), jk)
    } else {
        // The gradient system degenerates at the segment ends.
        let kv = DVector::from_vec(k.to_array().to_vec());
        let jk = finite_difference_jacobian(
            |x| pose_at(&UncertaintyParams::new(x[0], x[1], x[2])),
            &kv,
            FD_STEP,
        )?;
        (pose_at(k)?, jk)
    };

    let c = pose_error(m, &pose);
    // ∂c/∂k = −J_k with the position rows rotated into the observation frame.
    let r_obs: Matrix3<f64> = *m.frame.inverse().matrix();
    let mut jc = -j_k;
    let pos = r_obs * jc.rows(0, 3);
    jc.rows_mut(0, 3).copy_from(&pos);
    for i in 0..6 {
        if !m.obs_mask[i] {
            jc.row_mut(i).fill(0.0);
        }
    }
    Ok((c, jc))
}

/// Residuals, objective and identification Jacobian at one parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub residuals: Vec<Vector6<f64>>,
    pub c: DVector<f64>,
    pub objective: f64,
    pub rmse_um: f64,
    /// `∂c̃/∂k`, 6N×3 over all three parameters.
    pub jacobian: DMatrix<f64>,
}

pub fn evaluate(
    dataset: &[Measurement],
    params: &RobotParams,
    k: &UncertaintyParams,
    config: &CalibrationConfig,
) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(CremError::InvalidParameter("empty dataset".into()));
    }
    let parts: Vec<(Vector6<f64>, DMatrix<f64>)> = dataset
        .par_iter()
        .enumerate()
        .map(|(i, m)| {
            m.validate().map_err(|e| e.at(i))?;
            residual_and_jacobian(m, params, k, &config.marker_offset).map_err(|e| e.at(i))
        })
        .collect::<Result<_>>()?;

    let residuals: Vec<Vector6<f64>> = parts.iter().map(|(c, _)| *c).collect();
    let weights: Vec<Vector6<f64>> = dataset.iter().map(|m| config.weights(m)).collect();
    let (c, objective) = aggregate(&residuals, &weights);
    let mut jacobian = DMatrix::zeros(6 * dataset.len(), 3);
    for (j, (_, jc)) in parts.iter().enumerate() {
        jacobian.rows_mut(6 * j, 6).copy_from(jc);
    }
    Ok(Evaluation {
        rmse_um: position_rmse_um(&residuals),
        residuals,
        c,
        objective,
        jacobian,
    })
}

/// `J_cλ = ∂c̃/∂k` restricted to the free parameters (6N × n_free).
pub fn identification_jacobian(
    dataset: &[Measurement],
    params: &RobotParams,
    k: &UncertaintyParams,
    config: &CalibrationConfig,
) -> Result<DMatrix<f64>> {
    let e = evaluate(dataset, params, k, config)?;
    Ok(e.jacobian.select_columns(&config.free.indices()))
}

/// Weighted Gauss-Newton direction `(JᵀWJ)⁻¹ JᵀW c` via SVD of `W^½ J`.
fn weighted_solve(j: &DMatrix<f64>, c: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
    let sw = w.map(f64::sqrt);
    let a = DMatrix::from_fn(j.nrows(), j.ncols(), |r, col| sw[r] * j[(r, col)]);
    let b = c.component_mul(&sw);
    let svd = a.svd(true, true);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    let condition = if smin > 0.0 {
        (smax / smin).powi(2)
    } else {
        f64::INFINITY
    };
    if condition.is_nan() || condition > NORMAL_CONDITION_LIMIT {
        return Err(CremError::SingularNormalEquations { condition });
    }
    svd.solve(&b, 0.0)
        .map_err(|_| CremError::SingularNormalEquations { condition })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub k: UncertaintyParams,
    pub rmse_um: f64,
    pub objective: f64,
    /// Step size used for the update that followed this row.
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub k: UncertaintyParams,
    pub trace: Vec<TraceRow>,
    /// Number of times the step size was halved after an increase of M.
    pub step_halvings: usize,
}

impl CalibrationResult {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn final_rmse_um(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.rmse_um)
    }

    pub fn initial_rmse_um(&self) -> f64 {
        self.trace.first().map_or(f64::NAN, |r| r.rmse_um)
    }
}

/// Damped Gauss-Newton estimate of the free uncertainty parameters.
///
/// Every iteration evaluates the residuals at the current `k` and records a
/// trace row. The loop stops when the relative change of the objective falls
/// below `beta_conv` or the objective reaches `objective_floor`, returning
/// the `k` of the last recorded row. An update that increases the objective
/// is discarded and retried with half the step size.
pub fn nls_estimate(
    dataset: &[Measurement],
    params: &RobotParams,
    config: &CalibrationConfig,
    k_init: UncertaintyParams,
) -> Result<CalibrationResult> {
    config.validate()?;
    let free = config.free.indices();
    let weights = DVector::from_iterator(
        6 * dataset.len(),
        dataset
            .iter()
            .flat_map(|m| config.weights(m).as_slice().to_vec()),
    );

    let mut k = k_init;
    let mut eta = config.eta;
    let mut halvings = 0;
    let mut trace = Vec::new();
    let mut previous: Option<f64> = None;
    let mut current = evaluate(dataset, params, &k, config)?;

    for iteration in 1..=config.max_iter {
        trace.push(TraceRow {
            iteration,
            k,
            rmse_um: current.rmse_um,
            objective: current.objective,
            eta,
        });
        let converged = current.objective <= config.objective_floor
            || previous.is_some_and(|p| (p - current.objective).abs() < config.beta_conv * p);
        if converged {
            return Ok(CalibrationResult {
                k,
                trace,
                step_halvings: halvings,
            });
        }

        let j = current.jacobian.select_columns(&free);
        let step = weighted_solve(&j, &current.c, &weights)?;
        let (next_k, next) = loop {
            let mut arr = k.to_array();
            for (s, &i) in free.iter().enumerate() {
                arr[i] -= config.h_diag[i] * eta * step[s];
            }
            let candidate = UncertaintyParams::from_array(arr);
            let e = evaluate(dataset, params, &candidate, config)?;
            if e.objective <= current.objective || eta < config.eta * 1e-6 {
                break (candidate, e);
            }
            eta *= 0.5;
            halvings += 1;
            if let Some(row) = trace.last_mut() {
                row.eta = eta;
            }
        };
        previous = Some(current.objective);
        k = next_k;
        current = next;
    }
    Err(CremError::CalibrationNotConverged {
        iterations: config.max_iter,
    })
}

/// Index of the sample where the trajectory reverses along its principal
/// direction, or `None` when the extreme is at the end of the trajectory.
///
/// The positions are projected on their principal axis, oriented so that
/// the motion starts in the positive direction; the turning sample is the
/// maximum of that projection.
pub fn turning_point_index(positions: &[Vector3<f64>]) -> Option<usize> {
    let s = principal_projection(positions)?;
    let (imax, _) = s
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        });
    if imax + 1 >= s.len() || imax == 0 {
        None
    } else {
        Some(imax)
    }
}

/// Number of direction reversals of the projected trajectory, ignoring
/// increments of magnitude at most `tolerance` (mm).
pub fn count_turning_points(positions: &[Vector3<f64>], tolerance: f64) -> usize {
    let Some(s) = principal_projection(positions) else {
        return 0;
    };
    let mut count = 0;
    let mut last_sign = 0.0;
    for w in s.windows(2) {
        let d = w[1] - w[0];
        if d.abs() <= tolerance {
            continue;
        }
        let sign = d.signum();
        if last_sign != 0.0 && sign != last_sign {
            count += 1;
        }
        last_sign = sign;
    }
    count
}

fn principal_projection(positions: &[Vector3<f64>]) -> Option<Vec<f64>> {
    if positions.len() < 3 {
        return None;
    }
    let n = positions.len() as f64;
    let mean = positions.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in positions {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let axis = eig.eigenvectors.column(eig.eigenvalues.imax()).into_owned();
    let mut s: Vec<f64> = positions.iter().map(|p| (p - mean).dot(&axis)).collect();
    // Orient by the average of the first tenth of the samples.
    let head = (s.len() / 10).max(2);
    let early = s[1..head].iter().sum::<f64>() / (head - 1) as f64;
    if early < s[0] {
        s.iter_mut().for_each(|v| *v = -*v);
    }
    Some(s)
}

/// Measurements up to and including the turning sample; the whole dataset
/// when no turning point is found.
pub fn split_at_turning_point(dataset: &[Measurement]) -> &[Measurement] {
    let positions: Vec<Vector3<f64>> = dataset.iter().map(|m| m.position).collect();
    match turning_point_index(&positions) {
        Some(i) => &dataset[..=i],
        None => dataset,
    }
}
