use crate::error::{Error, Result};
use crate::problem::{Gauge, RigProblem};

/// Removes the seven similarity freedoms: the first image's pose is held
/// constant and the distance from its center to a second image's center is
/// frozen. The first reconstructed rig pair is used when there is one,
/// otherwise the two lowest registered image ids.
pub fn fix_gauge(problem: &mut RigProblem) -> Result<Gauge> {
    let (fixed, scale) = match problem.reconstructed_pairs().first() {
        Some(pair) => (pair.image_a, pair.image_b),
        None => {
            let mut posed = problem
                .images
                .values()
                .filter(|im| im.pose.is_some())
                .map(|im| im.id);
            match (posed.next(), posed.next()) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::Gauge("need at least two posed images".into())),
            }
        }
    };
    let ca = problem.pose(fixed).expect("posed").center;
    let cb = problem.pose(scale).expect("posed").center;
    let distance = (cb - ca).norm();
    if !(distance > 0.0) {
        return Err(Error::Gauge(format!(
            "images {fixed} and {scale} share a center; scale is undefined"
        )));
    }
    let gauge = Gauge {
        fixed_image: fixed,
        scale_image: scale,
        distance,
    };
    problem.gauge = Some(gauge);
    Ok(gauge)
}
