//! Reprojection residuals, the Huber loss and analytic Jacobians.

use nalgebra::{Matrix2x3, Matrix3, SMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project, skew, CameraPose, Intrinsics, DEPTH_EPSILON};
use crate::problem::{Observation, RigProblem};

pub type PoseJacobian = SMatrix<f64, 2, 6>;
pub type LandmarkJacobian = SMatrix<f64, 2, 3>;
pub type IntrinsicsJacobian = SMatrix<f64, 2, 5>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustLossConfig {
    /// Inlier scale in pixels.
    pub huber_delta: f64,
}

impl Default for RobustLossConfig {
    fn default() -> Self {
        Self { huber_delta: 1.0 }
    }
}

impl RobustLossConfig {
    pub fn new(huber_delta: f64) -> Result<Self> {
        if !(huber_delta > 0.0 && huber_delta.is_finite()) {
            return Err(Error::Domain(format!(
                "huber delta must be positive, got {huber_delta}"
            )));
        }
        Ok(Self { huber_delta })
    }
}

/// Huber loss on a squared residual norm `s`:
/// `s` inside the inlier region, `2 delta sqrt(s) - delta^2` outside.
pub fn huber_rho(s: f64, delta: f64) -> Result<f64> {
    if s < 0.0 || s.is_nan() {
        return Err(Error::Domain(format!(
            "huber loss needs a non-negative argument, got {s}"
        )));
    }
    if delta <= 0.0 {
        return Err(Error::Domain(format!(
            "huber delta must be positive, got {delta}"
        )));
    }
    Ok(huber_unchecked(s, delta).0)
}

/// `(rho(s), rho'(s))` without argument checks.
pub(crate) fn huber_unchecked(s: f64, delta: f64) -> (f64, f64) {
    let d2 = delta * delta;
    if s <= d2 {
        (s, 1.0)
    } else {
        let r = s.sqrt();
        (2.0 * delta * r - d2, delta / r)
    }
}

/// `x_ij - pi(R_j (X_i - c_j))` in pixels.
pub fn reprojection_residual(
    obs: &Observation,
    pose: &CameraPose,
    x: &Vector3<f64>,
    k: &Intrinsics,
) -> Result<Vector2<f64>> {
    Ok(obs.pixel - project(k, pose, x)?)
}

/// Analytic derivatives of a reprojection residual.
///
/// The pose block is ordered `[rotation increment, center]`, where the
/// rotation increment `w` updates the world-to-camera rotation as
/// `R <- exp(w) R`. The intrinsics block is `[f, cx, cy, k1, k2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReprojectionJacobians {
    pub pose: PoseJacobian,
    pub landmark: LandmarkJacobian,
    pub intrinsics: IntrinsicsJacobian,
}

/// One observation together with the parameter values it depends on.
#[derive(Debug, Clone, Copy)]
pub struct ReprojectionResidualBlock {
    pub observation: Observation,
    pub pose: CameraPose,
    pub landmark: Vector3<f64>,
    pub intrinsics: Intrinsics,
    pub residual: Vector2<f64>,
}

impl ReprojectionResidualBlock {
    pub fn new(
        observation: Observation,
        pose: CameraPose,
        landmark: Vector3<f64>,
        intrinsics: Intrinsics,
    ) -> Result<Self> {
        let residual = reprojection_residual(&observation, &pose, &landmark, &intrinsics)?;
        Ok(Self {
            observation,
            pose,
            landmark,
            intrinsics,
            residual,
        })
    }
}

pub fn residual_jacobians(block: &ReprojectionResidualBlock) -> Result<ReprojectionJacobians> {
    let (_, jac) = linearize(
        &block.observation.pixel,
        &block.pose.rotation.matrix(),
        &block.pose.center,
        &block.landmark,
        &block.intrinsics,
    )?;
    Ok(jac)
}

/// Residual and Jacobians in one pass, with the rotation matrix supplied by
/// the caller so it can be shared across observations of one image.
pub(crate) fn linearize(
    pixel: &Vector2<f64>,
    rotation: &Matrix3<f64>,
    center: &Vector3<f64>,
    x: &Vector3<f64>,
    k: &Intrinsics,
) -> Result<(Vector2<f64>, ReprojectionJacobians)> {
    let pc = rotation * (x - center);
    if pc.z <= DEPTH_EPSILON {
        return Err(Error::Cheirality { depth: pc.z });
    }
    let inv_z = 1.0 / pc.z;
    let xn = Vector2::new(pc.x * inv_z, pc.y * inv_z);
    let r2 = xn.norm_squared();
    let (k1, k2) = (k.radial.x, k.radial.y);
    let d = 1.0 + r2 * (k1 + r2 * k2);
    let f = k.focal;
    let projected = xn * (f * d) + k.principal_point;
    let residual = pixel - projected;

    // d(pixel)/d(xn) = f (d I + xn (dd/dxn)^T), dd/dxn = 2 (k1 + 2 k2 r2) xn
    let dd = 2.0 * (k1 + 2.0 * k2 * r2);
    let du_dxn = (nalgebra::Matrix2::identity() * d + xn * xn.transpose() * dd) * f;
    let dxn_dpc = Matrix2x3::new(inv_z, 0.0, -xn.x * inv_z, 0.0, inv_z, -xn.y * inv_z);
    let du_dpc = du_dxn * dxn_dpc;

    let mut pose = PoseJacobian::zeros();
    // d(pc)/dw = -[pc]x, d(pc)/dc = -R; residual carries a minus sign.
    pose.fixed_view_mut::<2, 3>(0, 0)
        .copy_from(&(du_dpc * skew(&pc)));
    pose.fixed_view_mut::<2, 3>(0, 3)
        .copy_from(&(du_dpc * rotation));
    let landmark = -(du_dpc * rotation);

    let mut intr = IntrinsicsJacobian::zeros();
    intr.fixed_view_mut::<2, 1>(0, 0).copy_from(&(-xn * d));
    intr[(0, 1)] = -1.0;
    intr[(1, 2)] = -1.0;
    intr.fixed_view_mut::<2, 1>(0, 3)
        .copy_from(&(-xn * (f * r2)));
    intr.fixed_view_mut::<2, 1>(0, 4)
        .copy_from(&(-xn * (f * r2 * r2)));

    Ok((
        residual,
        ReprojectionJacobians {
            pose,
            landmark,
            intrinsics: intr,
        },
    ))
}

/// Breakdown of the robustified reprojection objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReprojectionCost {
    pub cost: f64,
    pub n_used: usize,
    /// Observations skipped because the point is behind the camera.
    pub n_dropped: usize,
}

/// `1/2 sum rho(|x_ij - pi(R_j (X_i - c_j))|^2)` over every observation whose
/// image and landmark are estimated.
pub fn reprojection_cost(problem: &RigProblem, loss: &RobustLossConfig) -> ReprojectionCost {
    let mut out = ReprojectionCost::default();
    for obs in problem.active_observations() {
        let pose = problem.pose(obs.image).expect("active observation");
        let x = problem.landmark(obs.landmark).expect("active observation");
        let k = problem.intrinsics_of(obs.image).expect("validated problem");
        match reprojection_residual(obs, pose, x, k) {
            Ok(r) => {
                out.cost += 0.5 * huber_unchecked(r.norm_squared(), loss.huber_delta).0;
                out.n_used += 1;
            }
            Err(_) => out.n_dropped += 1,
        }
    }
    if out.n_dropped > 0 {
        log::debug!(
            "{} observations behind their camera were dropped",
            out.n_dropped
        );
    }
    out
}

pub fn evaluate_reprojection_cost(problem: &RigProblem, loss: &RobustLossConfig) -> f64 {
    reprojection_cost(problem, loss).cost
}
