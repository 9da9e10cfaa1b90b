//! The baseline constraint between the two cameras of a rig.
//!
//! Each reconstructed time index yields a relative orientation `p_i`
//! (axis-angle rotation followed by translation, expressed in camera A's
//! frame). The constraint penalizes changes of `p_i` between consecutive
//! reconstructed time indices. Its global weight grows with the fraction of
//! reconstructed pairs, and a final pass switches every pair between a low
//! and a high weight depending on how far it sits from the average.

use nalgebra::{SMatrix, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compose, left_jacobian_inverse, skew, CameraPose, Rotation};

/// Components of `p_avg` smaller than this are treated as zero by
/// [`per_pair_weight`].
pub const NEAR_ZERO_COMPONENT: f64 = 1e-12;
/// For near-zero average components, a pair only counts as an outlier when
/// its own component exceeds this magnitude.
pub const ZERO_COMPONENT_FLOOR: f64 = 1e-6;

pub type RelativePoseJacobian = SMatrix<f64, 6, 6>;

/// Relative orientation of camera B with respect to camera A:
/// `[axis-angle of R_B R_A^T, R_A (c_B - c_A)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativePose {
    pub p: Vector6<f64>,
}

impl RelativePose {
    pub fn new(p: Vector6<f64>) -> Self {
        Self { p }
    }

    pub fn from_parts(rotation: &Rotation, translation: &Vector3<f64>) -> Self {
        let r = rotation.axis_angle();
        Self {
            p: Vector6::new(r.x, r.y, r.z, translation.x, translation.y, translation.z),
        }
    }

    pub fn zero() -> Self {
        Self {
            p: Vector6::zeros(),
        }
    }

    pub fn rotation(&self) -> Rotation {
        Rotation::from_axis_angle(self.p.fixed_rows::<3>(0).into_owned())
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.p.fixed_rows::<3>(3).into_owned()
    }

    /// Pose of camera B given the pose of camera A.
    pub fn place_b(&self, a: &CameraPose) -> CameraPose {
        CameraPose {
            rotation: compose(&self.rotation(), &a.rotation),
            center: a.center + a.rotation.inverse().rotate(&self.translation()),
        }
    }
}

pub fn compute_relative_pose(a: &CameraPose, b: &CameraPose) -> RelativePose {
    let rot = compose(&b.rotation, &a.rotation.inverse());
    let t = a.rotation.rotate(&(b.center - a.center));
    RelativePose::from_parts(&rot, &t)
}

/// `p` together with its derivatives w.r.t. both poses, in the solver's pose
/// parameterization (`[rotation increment, center]`, `R <- exp(w) R`).
pub(crate) fn relative_pose_jacobians(
    a: &CameraPose,
    b: &CameraPose,
) -> (RelativePose, RelativePoseJacobian, RelativePoseJacobian) {
    let ra = a.rotation.matrix();
    let q = b.rotation.matrix() * ra.transpose();
    let rel = compute_relative_pose(a, b);
    let phi = rel.p.fixed_rows::<3>(0).into_owned();
    let t = rel.translation();
    let jinv = left_jacobian_inverse(&phi);

    let mut ja = RelativePoseJacobian::zeros();
    let mut jb = RelativePoseJacobian::zeros();
    ja.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-jinv * q));
    jb.fixed_view_mut::<3, 3>(0, 0).copy_from(&jinv);
    ja.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-skew(&t)));
    ja.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-ra));
    jb.fixed_view_mut::<3, 3>(3, 3).copy_from(&ra);
    (rel, ja, jb)
}

/// `p_i - p_next`, unweighted.
pub fn baseline_residual(p_i: &RelativePose, p_next: &RelativePose) -> Vector6<f64> {
    p_i.p - p_next.p
}

/// `1/2 sum_i |p_i - p_{i+1}|^2` over a time-ordered chain of pairs.
pub fn evaluate_baseline_cost(pairs: &[RelativePose]) -> f64 {
    pairs
        .windows(2)
        .map(|w| 0.5 * baseline_residual(&w[0], &w[1]).norm_squared())
        .sum()
}

/// Weights of the baseline constraint together with the pair counts that
/// drive the adaptive global weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintWeights {
    pub lambda: f64,
    pub lambda_low: f64,
    pub outlier_factor: f64,
    pub n_reconstructed_pairs: usize,
    pub n_total_pairs: usize,
}

impl Default for ConstraintWeights {
    fn default() -> Self {
        Self {
            lambda: 500.0,
            lambda_low: 250.0,
            outlier_factor: 5.0,
            n_reconstructed_pairs: 0,
            n_total_pairs: 0,
        }
    }
}

/// `lambda * N_p / N_t`.
pub fn global_weight(w: &ConstraintWeights) -> Result<f64> {
    if w.n_total_pairs == 0 {
        return Err(Error::Domain(
            "global weight needs at least one rig pair".into(),
        ));
    }
    if w.n_reconstructed_pairs > w.n_total_pairs {
        return Err(Error::Domain(format!(
            "{} reconstructed pairs exceed the {} available",
            w.n_reconstructed_pairs, w.n_total_pairs
        )));
    }
    Ok(w.lambda * (w.n_reconstructed_pairs as f64 / w.n_total_pairs as f64))
}

/// Component-wise mean. Only meaningful while the rotation parts are tightly
/// clustered away from the half-turn wrap.
pub fn average_relative_pose(pairs: &[RelativePose]) -> Result<RelativePose> {
    if pairs.is_empty() {
        return Err(Error::Domain(
            "cannot average an empty set of relative poses".into(),
        ));
    }
    let sum = pairs.iter().fold(Vector6::zeros(), |acc, p| acc + p.p);
    Ok(RelativePose::new(sum / pairs.len() as f64))
}

/// Whether any component of `p_i` deviates from the average by more than
/// `outlier_factor` times the average component's magnitude.
pub fn is_outlier_pair(p_i: &RelativePose, p_avg: &RelativePose, outlier_factor: f64) -> bool {
    p_i.p.iter().zip(p_avg.p.iter()).any(|(&pk, &ak)| {
        if ak.abs() < NEAR_ZERO_COMPONENT {
            pk.abs() > ZERO_COMPONENT_FLOOR
        } else {
            (pk - ak).abs() > outlier_factor * ak.abs()
        }
    })
}

/// `lambda` for pairs flagged by [`is_outlier_pair`], `lambda_low` otherwise.
pub fn per_pair_weight(p_i: &RelativePose, p_avg: &RelativePose, w: &ConstraintWeights) -> f64 {
    if is_outlier_pair(p_i, p_avg, w.outlier_factor) {
        w.lambda
    } else {
        w.lambda_low
    }
}
