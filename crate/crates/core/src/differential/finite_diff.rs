//! Central finite differences, used as the oracle for the analytic Jacobians.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::kinematics::Pose;
use crate::rotation::log_map;

/// Default central step (rad or mm).
pub const FD_STEP: f64 = 1e-6;

/// Reference scale below which [`relative_error`] reports absolute error.
/// Central differences of a pose of magnitude L carry round-off near
/// `ε·L/h ≈ 1e-8`, which swamps the relative error of entries much
/// smaller than one.
pub const FD_SCALE_FLOOR: f64 = 1.0;

/// 6×m Jacobian of a pose-valued map. Translational rows are central
/// differences of the position; rotational rows are `log(R(x+h) R(x−h)ᵀ)/2h`,
/// the base-frame angular rate.
pub fn finite_difference_jacobian<F>(f: F, at: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<Pose>,
{
    let mut jac = DMatrix::zeros(6, at.len());
    for j in 0..at.len() {
        let mut xp = at.clone();
        let mut xm = at.clone();
        xp[j] += h;
        xm[j] -= h;
        let plus = f(&xp)?;
        let minus = f(&xm)?;
        let dv = (plus.position - minus.position) / (2.0 * h);
        let dw = log_map(&(plus.rotation * minus.rotation.inverse())) / (2.0 * h);
        jac.fixed_view_mut::<3, 1>(0, j).copy_from(&dv);
        jac.fixed_view_mut::<3, 1>(3, j).copy_from(&dw);
    }
    Ok(jac)
}

/// k×m Jacobian of a vector-valued map.
pub fn finite_difference_vector<F>(f: F, at: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut cols = Vec::with_capacity(at.len());
    for j in 0..at.len() {
        let mut xp = at.clone();
        let mut xm = at.clone();
        xp[j] += h;
        xm[j] -= h;
        cols.push((f(&xp)? - f(&xm)?) / (2.0 * h));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Largest entrywise deviation, relative to the largest entry of the
/// reference (or `floor` when the reference is smaller).
pub fn relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    let scale = numeric.amax().max(floor);
    (analytic - numeric).amax() / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::segment_pose;
    use nalgebra::{Rotation3, Vector3};

    #[test]
    fn constant_map_has_zero_jacobian() {
        let j = finite_difference_jacobian(
            |_| Ok(Pose::identity()),
            &DVector::from_vec(vec![0.3, 1.0]),
            FD_STEP,
        )
        .unwrap();
        assert_eq!(j, DMatrix::zeros(6, 2));
    }

    #[test]
    fn rotation_rate_about_fixed_axis() {
        let axis = Vector3::new(0.0, 0.6, 0.8);
        let f = |x: &DVector<f64>| {
            Ok(Pose::new(
                Vector3::new(x[0] * x[0], 0.0, 0.0),
                Rotation3::from_scaled_axis(axis * 2.0 * x[0]),
            ))
        };
        let j = finite_difference_jacobian(f, &DVector::from_element(1, 0.4), FD_STEP).unwrap();
        let expected = DMatrix::from_column_slice(6, 1, &[0.8, 0.0, 0.0, 0.0, 1.2, 1.6]);
        assert!(relative_error(&j, &expected, 1.0) < 1e-9);
    }

    #[test]
    fn segment_position_derivative() {
        let f = |x: &DVector<f64>| Ok(segment_pose(x[0], 0.7, 0.2));
        let j = finite_difference_jacobian(f, &DVector::from_element(1, 10.0), FD_STEP).unwrap();
        let unit = segment_pose(1.0, 0.7, 0.2).position;
        assert!((j.fixed_view::<3, 1>(0, 0) - unit).amax() < 1e-8);
        assert!(j.fixed_view::<3, 1>(3, 0).amax() < 1e-12);
    }

    #[test]
    fn vector_map() {
        let f = |x: &DVector<f64>| Ok(DVector::from_vec(vec![x[0] * x[1], x[1].sin()]));
        let j = finite_difference_vector(f, &DVector::from_vec(vec![2.0, 0.5]), FD_STEP).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, 2.0, 0.0, 0.5f64.cos()]);
        assert!(relative_error(&j, &expected, 1.0) < 1e-9);
    }
}
