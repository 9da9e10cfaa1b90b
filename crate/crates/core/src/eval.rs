//! Accuracy metrics of a reconstruction against ground truth: similarity
//! registration, point-cloud distance, rig consistency and trajectory drift.

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotation_distance, Rotation, SimilarityTransform};
use crate::problem::{ImageId, RigProblem, StreamId};
use crate::rig::average_relative_pose;

/// Relative singular-value threshold below which a point set counts as
/// collinear.
const COLLINEAR_TOLERANCE: f64 = 1e-12;

/// Least-squares similarity `q ~ s R p + t` over corresponding points
/// (Umeyama). The rotation is always proper.
pub fn umeyama_align(
    estimated: &[Vector3<f64>],
    reference: &[Vector3<f64>],
) -> Result<SimilarityTransform> {
    if estimated.len() != reference.len() {
        return Err(Error::LengthMismatch(format!(
            "{} estimated points vs {} reference points",
            estimated.len(),
            reference.len()
        )));
    }
    if estimated.len() < 3 {
        return Err(Error::DegenerateConfiguration(format!(
            "{} correspondences; need at least 3",
            estimated.len()
        )));
    }
    let n = estimated.len() as f64;
    let mu_p = estimated.iter().sum::<Vector3<f64>>() / n;
    let mu_q = reference.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut spread_p = Matrix3::zeros();
    let mut spread_q = Matrix3::zeros();
    let mut var_p = 0.0;
    for (p, q) in estimated.iter().zip(reference) {
        let (dp, dq) = (p - mu_p, q - mu_q);
        cov += dq * dp.transpose();
        spread_p += dp * dp.transpose();
        spread_q += dq * dq.transpose();
        var_p += dp.norm_squared();
    }
    cov /= n;
    var_p /= n;
    for (m, name) in [(spread_p, "estimated"), (spread_q, "reference")] {
        let sv = m.singular_values();
        let mut s = [sv[0], sv[1], sv[2]];
        s.sort_by(|a, b| b.total_cmp(a));
        if !(s[0] > 0.0) || s[1] <= COLLINEAR_TOLERANCE * s[0] {
            return Err(Error::DegenerateConfiguration(format!(
                "{name} points are collinear or coincident"
            )));
        }
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let d = svd.singular_values;
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        let smallest = (0..3)
            .min_by(|a, b| d[*a].total_cmp(&d[*b]))
            .expect("three values");
        s[(smallest, smallest)] = -1.0;
    }
    let r = u * s * v_t;
    let scale = (Matrix3::from_diagonal(&d) * s).trace() / var_p;
    let rotation = Rotation::from_matrix(&r);
    let translation = mu_q - scale * rotation.rotate(&mu_p);
    SimilarityTransform::new(scale, rotation, translation)
}

/// Root-mean-square distance between transformed estimated points and their
/// references.
pub fn alignment_rms(
    t: &SimilarityTransform,
    estimated: &[Vector3<f64>],
    reference: &[Vector3<f64>],
) -> f64 {
    let sum: f64 = estimated
        .iter()
        .zip(reference)
        .map(|(p, q)| (t.apply(p) - q).norm_squared())
        .sum();
    (sum / estimated.len().max(1) as f64).sqrt()
}

/// Mean and (population) standard deviation of the distance from each
/// estimated point to its nearest reference point.
pub fn mean_absolute_distance(
    estimated: &[Vector3<f64>],
    reference: &[Vector3<f64>],
) -> Result<(f64, f64)> {
    if estimated.is_empty() || reference.is_empty() {
        return Err(Error::Precondition(
            "mean absolute distance needs two non-empty point sets".into(),
        ));
    }
    let d: Vec<f64> = estimated
        .iter()
        .map(|p| {
            reference
                .iter()
                .map(|q| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// `100 (base - ours) / base`; exactly 0 when the two are equal.
pub fn improvement_percent(base: f64, ours: f64) -> f64 {
    if base == ours {
        return 0.0;
    }
    100.0 * (base - ours) / base
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativePoseSpread {
    /// Population standard deviation of each component of `p_i`.
    pub std: [f64; 6],
    /// Largest `|(p_i)_k - (p_avg)_k|` per component.
    pub max_deviation: [f64; 6],
}

impl RelativePoseSpread {
    /// Norm of the per-component standard deviations.
    pub fn total(&self) -> f64 {
        Vector6::from_column_slice(&self.std).norm()
    }
}

pub fn relative_pose_spread(problem: &RigProblem) -> Result<RelativePoseSpread> {
    let rel: Vec<_> = problem
        .relative_poses()
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    if rel.len() < 2 {
        return Err(Error::Precondition(format!(
            "relative pose spread needs at least 2 reconstructed pairs, found {}",
            rel.len()
        )));
    }
    let avg = average_relative_pose(&rel)?.p;
    let n = rel.len() as f64;
    let mut std = [0.0; 6];
    let mut max_deviation = [0.0; 6];
    for k in 0..6 {
        let var = rel.iter().map(|p| (p.p[k] - avg[k]).powi(2)).sum::<f64>() / n;
        std[k] = var.sqrt();
        max_deviation[k] = rel
            .iter()
            .map(|p| (p.p[k] - avg[k]).abs())
            .fold(0.0, f64::max);
    }
    Ok(RelativePoseSpread { std, max_deviation })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointDrift {
    /// Aligned estimate minus truth at the last camera, ground-truth axes.
    pub offset: [f64; 3],
    pub norm: f64,
    /// Magnitude in the ground plane (x, y).
    pub horizontal: f64,
    /// Magnitude along the vertical axis (z).
    pub vertical: f64,
}

/// Displacement between the final estimated and true camera centers after
/// applying `alignment` to the estimate.
pub fn endpoint_drift(
    estimated: &[Vector3<f64>],
    truth: &[Vector3<f64>],
    alignment: &SimilarityTransform,
) -> Result<EndpointDrift> {
    if estimated.len() != truth.len() {
        return Err(Error::LengthMismatch(format!(
            "estimated trajectory has {} centers, ground truth {}",
            estimated.len(),
            truth.len()
        )));
    }
    let (Some(e), Some(t)) = (estimated.last(), truth.last()) else {
        return Err(Error::Precondition("empty trajectory".into()));
    };
    let d = alignment.apply(e) - t;
    Ok(EndpointDrift {
        offset: [d.x, d.y, d.z],
        norm: d.norm(),
        horizontal: d.xy().norm(),
        vertical: d.z.abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub n_images: usize,
    pub n_landmarks: usize,
    /// Scale of the estimate-to-truth similarity.
    pub alignment_scale: f64,
    /// RMS landmark distance after alignment.
    pub alignment_rms: f64,
    pub mean_absolute_distance: f64,
    pub std_deviation: f64,
    pub endpoint_drift: EndpointDrift,
    /// Spread of the relative poses after alignment (translations in
    /// ground-truth units).
    pub relative_pose_spread: RelativePoseSpread,
    pub mean_center_error: f64,
    pub max_center_error: f64,
    pub max_rotation_error: f64,
    /// Improvement of the mean absolute distance over a baseline report.
    pub improvement_percent: Option<f64>,
    /// Improvement of the endpoint drift over a baseline report.
    pub endpoint_improvement_percent: Option<f64>,
}

impl DriftReport {
    pub fn compare_to(&mut self, baseline: &DriftReport) {
        self.improvement_percent = Some(improvement_percent(
            baseline.mean_absolute_distance,
            self.mean_absolute_distance,
        ));
        self.endpoint_improvement_percent = Some(improvement_percent(
            baseline.endpoint_drift.norm,
            self.endpoint_drift.norm,
        ));
    }

    pub const CSV_HEADER: &'static str = "n_images,n_landmarks,alignment_scale,alignment_rms,\
mean_absolute_distance,std_deviation,endpoint_dx,endpoint_dy,endpoint_dz,endpoint_norm,\
horizontal_drift,vertical_drift,spread_rx,spread_ry,spread_rz,spread_tx,spread_ty,spread_tz,\
spread_total,mean_center_error,max_center_error,max_rotation_error,improvement_percent,\
endpoint_improvement_percent";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut cols = vec![
            self.n_images.to_string(),
            self.n_landmarks.to_string(),
            self.alignment_scale.to_string(),
            self.alignment_rms.to_string(),
            self.mean_absolute_distance.to_string(),
            self.std_deviation.to_string(),
        ];
        cols.extend(self.endpoint_drift.offset.iter().map(|v| v.to_string()));
        cols.push(self.endpoint_drift.norm.to_string());
        cols.push(self.endpoint_drift.horizontal.to_string());
        cols.push(self.endpoint_drift.vertical.to_string());
        cols.extend(self.relative_pose_spread.std.iter().map(|v| v.to_string()));
        cols.push(self.relative_pose_spread.total().to_string());
        cols.push(self.mean_center_error.to_string());
        cols.push(self.max_center_error.to_string());
        cols.push(self.max_rotation_error.to_string());
        cols.push(opt(self.improvement_percent));
        cols.push(opt(self.endpoint_improvement_percent));
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }
}

/// Camera centers of one stream, in time order, for every registered image.
pub fn stream_trajectory(problem: &RigProblem, stream: StreamId) -> Vec<(ImageId, Vector3<f64>)> {
    let mut v: Vec<_> = problem
        .images
        .values()
        .filter(|im| im.stream == stream)
        .filter_map(|im| im.pose.map(|p| (im.time_index, im.id, p.center)))
        .collect();
    v.sort_by_key(|(t, id, _)| (*t, *id));
    v.into_iter().map(|(_, id, c)| (id, c)).collect()
}

/// Registers `solved` to `truth` through their common landmarks and measures
/// everything in ground-truth units.
pub fn evaluate(solved: &RigProblem, truth: &RigProblem) -> Result<DriftReport> {
    let mut est = Vec::new();
    let mut reference = Vec::new();
    for (id, x) in &solved.landmarks {
        let Some(x) = x else { continue };
        match truth.landmarks.get(id) {
            Some(Some(q)) => {
                est.push(*x);
                reference.push(*q);
            }
            _ => {
                return Err(Error::IdMismatch(format!(
                    "landmark {id} is missing from the ground truth"
                )))
            }
        }
    }
    for im in solved.images.values().filter(|im| im.pose.is_some()) {
        if truth.pose(im.id).is_none() {
            return Err(Error::IdMismatch(format!(
                "image {} is missing from the ground truth",
                im.id
            )));
        }
    }
    let alignment = umeyama_align(&est, &reference)?;
    let aligned: Vec<Vector3<f64>> = est.iter().map(|p| alignment.apply(p)).collect();
    let truth_cloud: Vec<Vector3<f64>> = truth.landmarks.values().flatten().copied().collect();
    let (mad, std) = mean_absolute_distance(&aligned, &truth_cloud)?;

    let stream = solved.streams.keys().next().copied().unwrap_or(StreamId(0));
    let traj = stream_trajectory(solved, stream);
    let est_centers: Vec<_> = traj.iter().map(|(_, c)| *c).collect();
    let true_centers: Vec<_> = traj
        .iter()
        .map(|(id, _)| truth.pose(*id).expect("checked").center)
        .collect();
    let endpoint = endpoint_drift(&est_centers, &true_centers, &alignment)?;

    let mut aligned_problem = solved.clone();
    for im in aligned_problem.images.values_mut() {
        if let Some(p) = &im.pose {
            im.pose = Some(alignment.apply_to_pose(p));
        }
    }
    let spread = relative_pose_spread(&aligned_problem)?;

    let mut center_errors = Vec::new();
    let mut max_rotation_error: f64 = 0.0;
    for im in aligned_problem.images.values() {
        let Some(p) = &im.pose else { continue };
        let t = truth.pose(im.id).expect("checked");
        center_errors.push((p.center - t.center).norm());
        max_rotation_error = max_rotation_error.max(rotation_distance(&p.rotation, &t.rotation));
    }
    let mean_center_error = center_errors.iter().sum::<f64>() / center_errors.len().max(1) as f64;
    let max_center_error = center_errors.iter().copied().fold(0.0, f64::max);

    Ok(DriftReport {
        n_images: center_errors.len(),
        n_landmarks: est.len(),
        alignment_scale: alignment.scale,
        alignment_rms: alignment_rms(&alignment, &est, &reference),
        mean_absolute_distance: mad,
        std_deviation: std,
        endpoint_drift: endpoint,
        relative_pose_spread: spread,
        mean_center_error,
        max_center_error,
        max_rotation_error,
        improvement_percent: None,
        endpoint_improvement_percent: None,
    })
}
