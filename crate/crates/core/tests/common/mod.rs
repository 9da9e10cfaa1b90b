#![allow(dead_code)]

use nalgebra::{Vector2, Vector3};
use rigba::cost::{residual_jacobians, ReprojectionResidualBlock};
use rigba::experiment::{ExperimentConfig, TrajectoryKind};
use rigba::geometry::{compose, CameraPose, Intrinsics, Rotation};
use rigba::problem::{ImageId, LandmarkId, Observation};
use rigba::sim::{SceneBundle, SceneRng};

/// Scene configuration in rig units without pixel noise or initial
/// perturbation. Short sequences need `Straight`: a closed loop of a few
/// steps turns too fast for consecutive frames to share landmarks.
pub fn noise_free_config(
    trajectory: TrajectoryKind,
    n_time_steps: u32,
    n_landmarks: usize,
) -> ExperimentConfig {
    ExperimentConfig {
        trajectory,
        scene_scale: 1.0,
        n_time_steps,
        n_landmarks,
        pixel_sigma: 0.0,
        rotation_sigma: 0.0,
        translation_sigma: 0.0,
        landmark_sigma: 0.0,
        accumulate: false,
        ..Default::default()
    }
}

/// Noise-free observations with every pose and landmark jittered
/// independently by `sigma` (radians and scene units).
pub fn perturbed_scene(
    trajectory: TrajectoryKind,
    n_time_steps: u32,
    n_landmarks: usize,
    sigma: f64,
    seed: u64,
) -> SceneBundle {
    ExperimentConfig {
        rotation_sigma: sigma,
        translation_sigma: sigma,
        landmark_sigma: sigma,
        seed,
        ..noise_free_config(trajectory, n_time_steps, n_landmarks)
    }
    .generate_scene()
    .expect("scene")
}

/// A random projectable observation: camera, point in front of it with a
/// moderate field angle, and plausible intrinsics. The observed pixel is the
/// projection plus a small offset so residuals are nonzero.
pub fn random_block(rng: &mut SceneRng) -> ReprojectionResidualBlock {
    let rotation = Rotation::from_axis_angle(rng.normal3(1.0));
    let center = Vector3::new(
        rng.uniform_in(-20.0, 20.0),
        rng.uniform_in(-20.0, 20.0),
        rng.uniform_in(-20.0, 20.0),
    );
    let pose = CameraPose::new(rotation, center);
    let depth = rng.uniform_in(2.0, 50.0);
    let pc = Vector3::new(
        rng.uniform_in(-0.6, 0.6) * depth,
        rng.uniform_in(-0.45, 0.45) * depth,
        depth,
    );
    let x = rotation.inverse().rotate(&pc) + center;
    let k = Intrinsics::new(
        rng.uniform_in(200.0, 1000.0),
        rng.uniform_in(250.0, 400.0),
        rng.uniform_in(200.0, 300.0),
        rng.uniform_in(-0.2, 0.2),
        rng.uniform_in(-0.05, 0.05),
    )
    .expect("valid intrinsics");
    let pixel = rigba::geometry::project(&k, &pose, &x).expect("in front")
        + Vector2::new(rng.uniform_in(-3.0, 3.0), rng.uniform_in(-3.0, 3.0));
    let obs = Observation {
        image: ImageId(0),
        landmark: LandmarkId(0),
        pixel,
    };
    ReprojectionResidualBlock::new(obs, pose, x, k).expect("block")
}

fn residual(block: &ReprojectionResidualBlock, pose: CameraPose, x: Vector3<f64>, k: Intrinsics) -> Vector2<f64> {
    ReprojectionResidualBlock::new(block.observation, pose, x, k)
        .expect("still in front")
        .residual
}

/// Largest relative Frobenius error between the analytic Jacobian blocks and
/// central differences with step `h`. Pose columns follow the
/// `R <- exp(w) R`, `c <- c + dc` parameterization.
pub fn jacobian_error(block: &ReprojectionResidualBlock, h: f64) -> f64 {
    let jac = residual_jacobians(block).expect("jacobians");
    let (pose, x, k) = (block.pose, block.landmark, block.intrinsics);

    let mut pose_fd = nalgebra::SMatrix::<f64, 2, 6>::zeros();
    for i in 0..6 {
        let shifted = |s: f64| {
            let mut d = nalgebra::Vector6::zeros();
            d[i] = s;
            let w = Vector3::new(d[0], d[1], d[2]);
            CameraPose::new(
                compose(&Rotation::from_axis_angle(w), &pose.rotation),
                pose.center + Vector3::new(d[3], d[4], d[5]),
            )
        };
        let col = (residual(block, shifted(h), x, k) - residual(block, shifted(-h), x, k)) / (2.0 * h);
        pose_fd.set_column(i, &col);
    }

    let mut point_fd = nalgebra::SMatrix::<f64, 2, 3>::zeros();
    for i in 0..3 {
        let mut d = Vector3::zeros();
        d[i] = h;
        let col = (residual(block, pose, x + d, k) - residual(block, pose, x - d, k)) / (2.0 * h);
        point_fd.set_column(i, &col);
    }

    let mut intr_fd = nalgebra::SMatrix::<f64, 2, 5>::zeros();
    let base = k.to_array();
    for i in 0..5 {
        let at = |s: f64| {
            let mut a = base;
            a[i] += s;
            Intrinsics::from_array(a)
        };
        let col = (residual(block, pose, x, at(h)) - residual(block, pose, x, at(-h))) / (2.0 * h);
        intr_fd.set_column(i, &col);
    }

    let rel = |a: f64, b: f64| a / b.max(1e-8);
    rel((jac.pose - pose_fd).norm(), pose_fd.norm())
        .max(rel((jac.landmark - point_fd).norm(), point_fd.norm()))
        .max(rel((jac.intrinsics - intr_fd).norm(), intr_fd.norm()))
}

/// Largest rotation (radians) and center error between two problems after
/// aligning `estimate`'s camera centers onto `truth`'s.
pub fn aligned_pose_errors(
    estimate: &rigba::problem::RigProblem,
    truth: &rigba::problem::RigProblem,
) -> (f64, f64) {
    let ids: Vec<ImageId> = truth.images.keys().copied().collect();
    let est: Vec<_> = ids.iter().map(|id| estimate.pose(*id).unwrap().center).collect();
    let tru: Vec<_> = ids.iter().map(|id| truth.pose(*id).unwrap().center).collect();
    let s = rigba::eval::umeyama_align(&est, &tru).expect("alignment");
    let mut rot: f64 = 0.0;
    let mut cen: f64 = 0.0;
    for id in &ids {
        let aligned = s.apply_to_pose(estimate.pose(*id).unwrap());
        let t = truth.pose(*id).unwrap();
        rot = rot.max(rigba::geometry::rotation_distance(&aligned.rotation, &t.rotation));
        cen = cen.max((aligned.center - t.center).norm());
    }
    (rot, cen)
}

/// Two cameras one unit apart, one landmark ten units ahead of the first.
/// With focal 100 and principal point (50, 50) the landmark projects to
/// (50, 50) in camera 0 and (40, 50) in camera 1; the second observation is
/// recorded at u = 41.
pub const MINIMAL_FILE: &str = "\
RIGBA 1
# two cameras, one landmark
STREAM 0 100 50 50 0 0
STREAM 1 100 50 50 0 0
IMAGE 0 0 0 0 0 0 0 0 0
IMAGE 1 1 0 0 0 0 1 0 0
LANDMARK 0 0 0 10
OBS 0 0 50 50
OBS 1 0 41 50
RIG_PAIR 0 0 1
";

/// Malformed files with the line and record kind the parse error must name.
pub fn malformed_fixtures() -> Vec<(&'static str, String, usize, &'static str)> {
    let swap = |from: &str, to: &str| MINIMAL_FILE.replace(from, to);
    vec![
        ("missing header", "STREAM 0 100 50 50 0 0\n".into(), 1, "header"),
        ("unsupported version", "RIGBA 2\n".into(), 1, "header"),
        ("empty file", String::new(), 1, "header"),
        ("rig pair with missing image", swap("RIG_PAIR 0 0 1", "RIG_PAIR 0 0 7"), 10, "RIG_PAIR"),
        ("rig pair at wrong time", swap("RIG_PAIR 0 0 1", "RIG_PAIR 3 0 1"), 10, "RIG_PAIR"),
        ("rig pair within one stream", swap("IMAGE 1 1 0", "IMAGE 1 0 0"), 10, "RIG_PAIR"),
        ("observation of missing landmark", swap("OBS 1 0 41 50", "OBS 1 4 41 50"), 9, "OBS"),
        ("observation of missing image", swap("OBS 0 0 50 50", "OBS 5 0 50 50"), 8, "OBS"),
        ("image of unknown stream", swap("IMAGE 1 1 0", "IMAGE 1 2 0"), 6, "IMAGE"),
        ("duplicate image", swap("IMAGE 1 1 0 0 0 0 1 0 0", "IMAGE 0 1 0 0 0 0 1 0 0"), 6, "IMAGE"),
        ("short stream", swap("STREAM 1 100 50 50 0 0", "STREAM 1 100 50 50 0"), 4, "STREAM"),
        ("negative focal", swap("STREAM 1 100", "STREAM 1 -100"), 4, "STREAM"),
        ("non-numeric coordinate", swap("LANDMARK 0 0 0 10", "LANDMARK 0 0 x 10"), 7, "LANDMARK"),
        ("non-finite coordinate", swap("LANDMARK 0 0 0 10", "LANDMARK 0 0 inf 10"), 7, "LANDMARK"),
        ("unknown record", swap("# two cameras, one landmark", "CAMERA 0"), 2, "CAMERA"),
    ]
}

/// Reference points on a cubic grid with spacing 10 and an estimate shifted
/// by (0.5, 0, 0): every nearest neighbour is the point's own source.
pub fn grid_fixture() -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let mut reference = Vec::new();
    for i in 0..6 {
        for j in 0..6 {
            for k in 0..6 {
                reference.push(Vector3::new(i as f64, j as f64, k as f64) * 10.0);
            }
        }
    }
    let estimate = reference.iter().map(|p| p + Vector3::new(0.5, 0.0, 0.0)).collect();
    (estimate, reference)
}

/// A rigid rig on a straight path whose pair at `corrupt` has camera B
/// displaced by `offset` in camera A's frame.
pub fn rig_with_corrupted_pair(
    n: u32,
    corrupt: u32,
    offset: Vector3<f64>,
) -> (rigba::problem::RigProblem, rigba::rig::RelativePose) {
    use rigba::problem::{Image, RigPair, RigProblem, StreamId};
    use rigba::rig::RelativePose;
    let rel = RelativePose::new(nalgebra::Vector6::new(0.01, 0.05, -0.02, -1.0, 0.02, 0.05));
    let mut p = RigProblem::new();
    let k = Intrinsics::new(500.0, 320.0, 240.0, 0.0, 0.0).unwrap();
    p.add_stream(StreamId(0), k).unwrap();
    p.add_stream(StreamId(1), k).unwrap();
    for t in 0..n {
        let a = CameraPose::new(
            Rotation::from_axis_angle(Vector3::new(0.0, 0.1 * t as f64, 0.0)),
            Vector3::new(2.0 * t as f64, 0.0, 0.0),
        );
        let mut r = rel;
        if t == corrupt {
            for i in 0..3 {
                r.p[3 + i] += offset[i];
            }
        }
        let b = r.place_b(&a);
        for (i, (pose, s)) in [(a, 0), (b, 1)].into_iter().enumerate() {
            p.add_image(Image {
                id: ImageId(2 * t + i as u32),
                stream: StreamId(s),
                time_index: t,
                pose: Some(pose),
            })
            .unwrap();
        }
        p.add_rig_pair(RigPair {
            time_index: t,
            image_a: ImageId(2 * t),
            image_b: ImageId(2 * t + 1),
        })
        .unwrap();
    }
    (p, rel)
}
