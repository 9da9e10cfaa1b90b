//! Incremental reconstruction: one time index at a time, each new pair
//! resected against the current map, new points triangulated, then the whole
//! reconstruction re-adjusted with the weight `lambda N_p / N_t`.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::cost::{huber_unchecked, linearize};
use crate::error::{Error, Result};
use crate::geometry::{compose, CameraPose, Rotation};
use crate::problem::{ImageId, LandmarkId, RigProblem};

use super::{final_full_iteration, fix_gauge, solve, SolveReport, SolverOptions};

/// Minimum number of already reconstructed landmarks a new image must see.
pub const MIN_RESECTION_POINTS: usize = 6;
/// Minimum angle (radians) between two viewing rays for triangulation.
pub const MIN_TRIANGULATION_ANGLE: f64 = 1.0_f64 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Plain bundle adjustment (`lambda = 0`).
    Traditional,
    /// Baseline constraint with the adaptive weight and the final per-pair pass.
    Constrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthOutcome {
    pub time_index: u32,
    pub images: Vec<ImageId>,
    pub new_landmarks: usize,
    pub report: SolveReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub mode: Mode,
    pub steps: Vec<GrowthOutcome>,
    /// Time indices skipped for lack of overlap.
    pub skipped: Vec<u32>,
    /// Final adjustment: the per-pair pass in constrained mode, a plain solve
    /// otherwise.
    pub final_report: Option<SolveReport>,
}

/// Refines one camera pose against fixed landmarks and intrinsics, starting
/// from `initial`.
pub fn resect(
    problem: &RigProblem,
    image: ImageId,
    initial: CameraPose,
    options: &SolverOptions,
) -> Result<CameraPose> {
    let im = problem
        .images
        .get(&image)
        .ok_or_else(|| Error::Precondition(format!("unknown image {image}")))?;
    let k = problem.streams[&im.stream];
    let points: Vec<(nalgebra::Vector2<f64>, Vector3<f64>)> = problem
        .observations
        .iter()
        .filter(|o| o.image == image)
        .filter_map(|o| problem.landmark(o.landmark).map(|x| (o.pixel, *x)))
        .collect();
    if points.len() < MIN_RESECTION_POINTS {
        return Err(Error::InsufficientOverlap {
            time_index: im.time_index,
            detail: format!(
                "image {image} sees {} reconstructed landmarks",
                points.len()
            ),
        });
    }

    let cost_of = |pose: &CameraPose| -> (f64, usize) {
        let r = pose.rotation.matrix();
        let mut c = 0.0;
        let mut used = 0;
        for (px, x) in &points {
            if let Ok((res, _)) = linearize(px, &r, &pose.center, x, &k) {
                c += 0.5 * huber_unchecked(res.norm_squared(), options.loss.huber_delta).0;
                used += 1;
            }
        }
        (c, used)
    };

    let mut pose = initial;
    let (mut cost, mut used) = cost_of(&pose);
    let mut mu = options.initial_damping;
    for _ in 0..options.max_iterations {
        let r = pose.rotation.matrix();
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (px, x) in &points {
            let Ok((res, jac)) = linearize(px, &r, &pose.center, x, &k) else {
                continue;
            };
            let w = huber_unchecked(res.norm_squared(), options.loss.huber_delta).1;
            h += jac.pose.transpose() * jac.pose * w;
            g += jac.pose.transpose() * res * w;
        }
        if g.amax() <= options.gradient_tolerance {
            break;
        }
        let mut damped = h;
        for i in 0..6 {
            damped[(i, i)] += mu * h[(i, i)].clamp(1e-6, 1e32);
        }
        let Some(chol) = damped.cholesky() else {
            mu *= options.damping_increase;
            continue;
        };
        let step = chol.solve(&(-g));
        let w = Vector3::new(step[0], step[1], step[2]);
        let candidate = CameraPose::new(
            compose(&Rotation::from_axis_angle(w), &pose.rotation),
            pose.center + Vector3::new(step[3], step[4], step[5]),
        );
        let (new_cost, new_used) = cost_of(&candidate);
        let x_norm = pose.rotation.axis_angle().norm_squared() + pose.center.norm_squared();
        let small = step.norm()
            <= options.parameter_tolerance * (x_norm.sqrt() + options.parameter_tolerance);
        if new_cost < cost && new_used >= used {
            pose = candidate;
            cost = new_cost;
            used = new_used;
            mu *= options.damping_decrease;
        } else {
            mu *= options.damping_increase;
        }
        if small || mu > 1e32 {
            break;
        }
    }
    Ok(pose)
}

/// Least-squares ray intersection over every registered observer of the
/// landmark. Returns `None` with fewer than two observers, rays that are too
/// close to parallel, or a point behind any observer.
pub fn triangulate(problem: &RigProblem, landmark: LandmarkId) -> Option<Vector3<f64>> {
    let mut rays: Vec<(Vector3<f64>, Vector3<f64>, CameraPose)> = Vec::new();
    for o in problem
        .observations
        .iter()
        .filter(|o| o.landmark == landmark)
    {
        let Some(pose) = problem.pose(o.image) else {
            continue;
        };
        let k = problem.intrinsics_of(o.image)?;
        let n = k.unproject(&o.pixel);
        let dir_cam = Vector3::new(n.x, n.y, 1.0).normalize();
        let dir = pose.rotation.inverse().rotate(&dir_cam);
        rays.push((pose.center, dir, *pose));
    }
    if rays.len() < 2 {
        return None;
    }
    let max_cos = MIN_TRIANGULATION_ANGLE.cos();
    let wide_enough = rays
        .iter()
        .enumerate()
        .any(|(i, a)| rays[i + 1..].iter().any(|b| a.1.dot(&b.1) < max_cos));
    if !wide_enough {
        return None;
    }

    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for (c, d, _) in &rays {
        let p = Matrix3::identity() - d * d.transpose();
        a += p;
        b += p * c;
    }
    let x = a.try_inverse()? * b;
    let in_front = rays
        .iter()
        .all(|(_, _, pose)| pose.to_camera(&x).z > crate::geometry::DEPTH_EPSILON);
    in_front.then_some(x)
}

fn triangulate_pending(problem: &mut RigProblem) -> usize {
    let pending: Vec<LandmarkId> = problem
        .landmarks
        .iter()
        .filter(|(_, p)| p.is_none())
        .map(|(id, _)| *id)
        .collect();
    let mut added = 0;
    for id in pending {
        if let Some(x) = triangulate(problem, id) {
            problem.landmarks.insert(id, Some(x));
            added += 1;
        }
    }
    added
}

fn images_at(problem: &RigProblem, time_index: u32) -> Vec<ImageId> {
    problem
        .images
        .values()
        .filter(|im| im.time_index == time_index)
        .map(|im| im.id)
        .collect()
}

fn initial_pose(initial: &RigProblem, id: ImageId) -> Result<CameraPose> {
    initial
        .pose(id)
        .copied()
        .ok_or_else(|| Error::Precondition(format!("no initial pose for image {id}")))
}

/// Starts a reconstruction from the images of one time index, taking their
/// poses from `initial` and triangulating what they jointly observe.
pub fn bootstrap(
    problem: &mut RigProblem,
    initial: &RigProblem,
    time_index: u32,
    options: &SolverOptions,
) -> Result<GrowthOutcome> {
    let images = images_at(problem, time_index);
    if images.len() < 2 {
        return Err(Error::InsufficientOverlap {
            time_index,
            detail: "bootstrap needs two images".into(),
        });
    }
    let mut trial = problem.clone();
    for id in &images {
        trial.images.get_mut(id).expect("listed").pose = Some(initial_pose(initial, *id)?);
    }
    let new_landmarks = triangulate_pending(&mut trial);
    if new_landmarks < MIN_RESECTION_POINTS {
        return Err(Error::InsufficientOverlap {
            time_index,
            detail: format!("only {new_landmarks} landmarks triangulated"),
        });
    }
    fix_gauge(&mut trial)?;
    let report = solve(&mut trial, options)?;
    *problem = trial;
    Ok(GrowthOutcome {
        time_index,
        images,
        new_landmarks,
        report,
    })
}

/// Adds the images of `time_index` to the reconstruction and re-adjusts.
///
/// On [`Error::InsufficientOverlap`] the problem is left untouched.
pub fn grow_problem(
    problem: &mut RigProblem,
    initial: &RigProblem,
    time_index: u32,
    options: &SolverOptions,
) -> Result<GrowthOutcome> {
    if problem.n_registered_images() == 0 {
        return bootstrap(problem, initial, time_index, options);
    }
    let images: Vec<ImageId> = images_at(problem, time_index)
        .into_iter()
        .filter(|id| !problem.is_registered(*id))
        .collect();
    let mut trial = problem.clone();
    let mut resected = Vec::with_capacity(images.len());
    for id in &images {
        let pose = resect(problem, *id, initial_pose(initial, *id)?, options)?;
        resected.push((*id, pose));
    }
    for (id, pose) in resected {
        trial.images.get_mut(&id).expect("listed").pose = Some(pose);
    }
    let new_landmarks = triangulate_pending(&mut trial);
    if trial.gauge.is_none() {
        fix_gauge(&mut trial)?;
    }
    let report = solve(&mut trial, options)?;
    *problem = trial;
    Ok(GrowthOutcome {
        time_index,
        images,
        new_landmarks,
        report,
    })
}

/// Full incremental pipeline over every time index of `initial`, which
/// supplies the topology, intrinsics and initial pose guesses. Returns the
/// reconstructed problem.
pub fn reconstruct(
    initial: &RigProblem,
    mode: Mode,
    options: &SolverOptions,
) -> Result<(RigProblem, ReconstructionReport)> {
    let mut problem = initial.unregistered();
    if mode == Mode::Traditional {
        problem.rig.lambda = 0.0;
    }
    let mut report = ReconstructionReport {
        mode,
        steps: Vec::new(),
        skipped: Vec::new(),
        final_report: None,
    };
    for t in problem.time_indices() {
        match grow_problem(&mut problem, initial, t, options) {
            Ok(step) => report.steps.push(step),
            Err(Error::InsufficientOverlap { time_index, detail }) => {
                log::warn!("skipping time index {time_index}: {detail}");
                report.skipped.push(time_index);
            }
            Err(e) => return Err(e),
        }
    }
    if problem.n_registered_images() == 0 {
        return Err(Error::InsufficientOverlap {
            time_index: 0,
            detail: "no time index could be reconstructed".into(),
        });
    }
    report.final_report = match mode {
        Mode::Constrained if problem.n_reconstructed_pairs() == problem.n_total_pairs() => {
            Some(final_full_iteration(&mut problem, options)?)
        }
        Mode::Constrained => {
            log::warn!(
                "final per-pair pass skipped: {} of {} pairs reconstructed",
                problem.n_reconstructed_pairs(),
                problem.n_total_pairs()
            );
            None
        }
        Mode::Traditional => Some(solve(&mut problem, options)?),
    };
    Ok((problem, report))
}
