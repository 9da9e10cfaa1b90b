//! Deterministic synthetic rig scenes: a two-camera rig driven along a
//! trajectory, landmarks scattered in a corridor beside it, and windowed
//! observations with optional noise.

mod format;

pub use format::{parse_problem, read_problem, render_problem, write_problem, FORMAT_HEADER};

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3, Vector6};
use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compose, project, CameraPose, Intrinsics, Rotation};
use crate::problem::{Image, ImageId, LandmarkId, Observation, RigPair, RigProblem, StreamId};
use crate::rig::RelativePose;

/// Fewest landmarks every generated image must observe.
pub const MIN_VISIBLE_LANDMARKS: usize = 6;

pub const STREAM_A: StreamId = StreamId(0);
pub const STREAM_B: StreamId = StreamId(1);

pub fn image_a(time_index: u32) -> ImageId {
    ImageId(2 * time_index)
}

pub fn image_b(time_index: u32) -> ImageId {
    ImageId(2 * time_index + 1)
}

/// Seeded generator: SplitMix64 words, 53-bit uniforms, Box-Muller normals.
/// Each purpose (layout, pixel noise, ...) gets its own stream so changing
/// one noise level does not reshuffle the others.
#[derive(Debug, Clone)]
pub struct SceneRng {
    inner: SplitMix64,
}

impl SceneRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mixed = seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
        Self {
            inner: SplitMix64::seed_from_u64(mixed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal; uses one Box-Muller draw per call.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    pub fn normal3(&mut self, sigma: f64) -> Vector3<f64> {
        let x = self.normal();
        let y = self.normal();
        let z = self.normal();
        Vector3::new(x, y, z) * sigma
    }
}

const STREAM_LAYOUT: u64 = 1;
const STREAM_PIXEL: u64 = 2;
const STREAM_POSE: u64 = 3;
const STREAM_LANDMARK: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigDefinition {
    /// Pose of camera B relative to camera A.
    pub relative: RelativePose,
    pub intrinsics: [Intrinsics; 2],
    /// Width and height in pixels; observations outside are discarded.
    pub image_size: Vector2<f64>,
}

impl Default for RigDefinition {
    /// Two sideways-looking cameras about one unit apart along the direction
    /// of travel, slightly toed in, with different lenses.
    fn default() -> Self {
        Self {
            relative: RelativePose::new(Vector6::new(0.0, 0.05, 0.0, -1.0, 0.02, 0.05)),
            intrinsics: [
                Intrinsics::from_array([500.0, 320.0, 240.0, -0.05, 0.01]),
                Intrinsics::from_array([520.0, 316.0, 244.0, -0.03, 0.005]),
            ],
            image_size: Vector2::new(640.0, 480.0),
        }
    }
}

impl RigDefinition {
    pub fn validate(&self) -> Result<()> {
        if !(self.relative.translation().norm() > 0.0) {
            return Err(Error::Precondition("rig baseline must be positive".into()));
        }
        for k in &self.intrinsics {
            Intrinsics::new(
                k.focal,
                k.principal_point.x,
                k.principal_point.y,
                k.radial.x,
                k.radial.y,
            )?;
        }
        if !(self.image_size.x > 0.0 && self.image_size.y > 0.0) {
            return Err(Error::Precondition("image size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectoryShape {
    /// Counter-clockwise circle whose last step ends back at the start.
    ClosedLoop,
    Straight,
    /// Counter-clockwise arc turning through `turn` radians in total.
    Arc {
        turn: f64,
    },
}

/// Planar trajectory of the rig body (world z is up). The heading follows the
/// path tangent; camera A looks to the right of the heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub shape: TrajectoryShape,
    pub n_time_steps: u32,
    pub step_length: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            shape: TrajectoryShape::ClosedLoop,
            n_time_steps: 40,
            step_length: 0.5,
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_time_steps < 2 {
            return Err(Error::Precondition(
                "trajectory needs at least two time steps".into(),
            ));
        }
        if !(self.step_length > 0.0) {
            return Err(Error::Precondition("step length must be positive".into()));
        }
        if let TrajectoryShape::Arc { turn } = self.shape {
            if !turn.is_finite() || turn == 0.0 {
                return Err(Error::Precondition(
                    "arc turn must be finite and nonzero".into(),
                ));
            }
        }
        Ok(())
    }

    /// Body position and heading angle at each time index.
    pub fn samples(&self) -> Vec<(Vector3<f64>, f64)> {
        (0..self.n_time_steps)
            .map(|t| self.sample_at(t as f64))
            .collect()
    }

    /// Body position and heading at a (possibly fractional or out-of-range)
    /// time; the path is extended smoothly past both ends.
    pub fn sample_at(&self, t: f64) -> (Vector3<f64>, f64) {
        let n = self.n_time_steps as f64;
        let (turn, steps) = match self.shape {
            TrajectoryShape::ClosedLoop => (2.0 * PI, n),
            TrajectoryShape::Arc { turn } => (turn, n - 1.0),
            TrajectoryShape::Straight => {
                return (Vector3::new(t * self.step_length, 0.0, 0.0), 0.0)
            }
        };
        // chord length per step equals the step length
        let dtheta = turn / steps;
        let radius = self.step_length / (2.0 * (0.5 * dtheta.abs()).sin());
        let theta = dtheta * t;
        let pos = Vector3::new(
            radius * (theta * dtheta.signum()).sin(),
            dtheta.signum() * radius * (1.0 - theta.cos()),
            0.0,
        );
        (pos, theta + 0.5 * dtheta)
    }
}

/// Pose of camera A at a body position and heading: optical axis to the right
/// of travel, image x pointing backwards, image y pointing down.
pub fn camera_a_pose(position: &Vector3<f64>, heading: f64) -> CameraPose {
    let (s, c) = heading.sin_cos();
    let x = Vector3::new(-c, -s, 0.0);
    let y = Vector3::new(0.0, 0.0, -1.0);
    let z = Vector3::new(s, -c, 0.0);
    let m = nalgebra::Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    CameraPose::new(Rotation::from_matrix(&m), *position)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSpec {
    pub count: usize,
    /// Distance range to the right of the path.
    pub lateral: (f64, f64),
    /// Height range relative to the cameras.
    pub height: (f64, f64),
    /// Landmarks are also anchored this many time steps before the first
    /// and after the last frame, so cameras looking ahead or behind still
    /// see a populated corridor at the ends.
    pub margin: u32,
    /// Seed of the landmark layout; independent of the noise seed so that
    /// scenes differing only in noise share their topology.
    pub layout_seed: u64,
}

impl Default for LandmarkSpec {
    fn default() -> Self {
        Self {
            count: 600,
            lateral: (4.0, 10.0),
            height: (-1.5, 2.0),
            margin: 4,
            layout_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Gaussian pixel noise on every observation (pixels).
    pub pixel_sigma: f64,
    /// Initial-estimate rotation perturbation (radians).
    pub rotation_sigma: f64,
    /// Initial-estimate center perturbation (scene units).
    pub translation_sigma: f64,
    /// Initial-estimate landmark perturbation (scene units).
    pub landmark_sigma: f64,
    /// When set, the rig body pose perturbation is a random walk over time
    /// (shared by both cameras) on top of the per-camera jitter.
    pub accumulate: bool,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::noise_free(0)
    }
}

impl NoiseSpec {
    pub fn noise_free(seed: u64) -> Self {
        Self {
            pixel_sigma: 0.0,
            rotation_sigma: 0.0,
            translation_sigma: 0.0,
            landmark_sigma: 0.0,
            accumulate: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.pixel_sigma,
            self.rotation_sigma,
            self.translation_sigma,
            self.landmark_sigma,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Precondition(
                "noise levels must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Everything that went into a generated scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneMetadata {
    pub rig: RigDefinition,
    pub trajectory: TrajectorySpec,
    pub landmarks: LandmarkSpec,
    pub covisibility_window: u32,
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub truth: RigProblem,
    /// Same topology and observations as `truth`, perturbed poses and
    /// landmarks.
    pub initial: RigProblem,
    pub metadata: SceneMetadata,
    /// Time index each landmark is anchored to (may lie outside the
    /// trajectory by up to the landmark margin).
    pub anchors: Vec<i64>,
}

/// Generates a scene. A landmark anchored at time `s` can only be observed
/// from frames `t` with `|s - t| <= covisibility_window`, and only where it
/// projects inside the image in front of the camera.
pub fn generate(
    rig: &RigDefinition,
    trajectory: &TrajectorySpec,
    landmarks: &LandmarkSpec,
    covisibility_window: u32,
    noise: &NoiseSpec,
) -> Result<SceneBundle> {
    rig.validate()?;
    trajectory.validate()?;
    noise.validate()?;
    if landmarks.count < 10 {
        return Err(Error::Precondition(
            "at least 10 landmarks are required".into(),
        ));
    }
    if covisibility_window < 1 {
        return Err(Error::Precondition(
            "covisibility window must be at least 1".into(),
        ));
    }
    if !(landmarks.lateral.0 > 0.0 && landmarks.lateral.1 >= landmarks.lateral.0)
        || landmarks.height.1 < landmarks.height.0
    {
        return Err(Error::Precondition("invalid landmark ranges".into()));
    }

    let samples = trajectory.samples();
    let n = trajectory.n_time_steps;

    let mut truth = RigProblem::new();
    truth.add_stream(STREAM_A, rig.intrinsics[0])?;
    truth.add_stream(STREAM_B, rig.intrinsics[1])?;
    for (t, (pos, heading)) in samples.iter().enumerate() {
        let t = t as u32;
        let a = camera_a_pose(pos, *heading);
        let b = rig.relative.place_b(&a);
        truth.add_image(Image {
            id: image_a(t),
            stream: STREAM_A,
            time_index: t,
            pose: Some(a),
        })?;
        truth.add_image(Image {
            id: image_b(t),
            stream: STREAM_B,
            time_index: t,
            pose: Some(b),
        })?;
        truth.add_rig_pair(RigPair {
            time_index: t,
            image_a: image_a(t),
            image_b: image_b(t),
        })?;
    }

    let mut layout = SceneRng::new(landmarks.layout_seed, STREAM_LAYOUT);
    let mut anchors = Vec::with_capacity(landmarks.count);
    for i in 0..landmarks.count {
        let span = n as u64 + 2 * landmarks.margin as u64;
        let anchor = ((i as u64 * span) / landmarks.count as u64) as i64 - landmarks.margin as i64;
        let (pos, heading) = trajectory.sample_at(anchor as f64);
        let (s, c) = heading.sin_cos();
        let forward = Vector3::new(c, s, 0.0);
        let right = Vector3::new(s, -c, 0.0);
        let along = layout.uniform_in(-0.5, 0.5) * trajectory.step_length;
        let lateral = layout.uniform_in(landmarks.lateral.0, landmarks.lateral.1);
        let height = layout.uniform_in(landmarks.height.0, landmarks.height.1);
        let x = pos + forward * along + right * lateral + Vector3::z() * height;
        truth.add_landmark(LandmarkId(i as u32), Some(x))?;
        anchors.push(anchor);
    }

    let mut pixel_rng = SceneRng::new(noise.seed, STREAM_PIXEL);
    let image_ids: Vec<ImageId> = truth.images.keys().copied().collect();
    for id in image_ids {
        let im = &truth.images[&id];
        let (t, pose, k) = (
            im.time_index,
            im.pose.expect("ground truth"),
            truth.streams[&im.stream],
        );
        let mut visible = 0;
        for (i, anchor) in anchors.iter().enumerate() {
            if anchor.abs_diff(t as i64) > covisibility_window as u64 {
                continue;
            }
            let lid = LandmarkId(i as u32);
            let x = truth.landmarks[&lid].expect("ground truth");
            let Ok(px) = project(&k, &pose, &x) else {
                continue;
            };
            if !(px.x >= 0.0 && px.x < rig.image_size.x && px.y >= 0.0 && px.y < rig.image_size.y) {
                continue;
            }
            let noisy = if noise.pixel_sigma > 0.0 {
                let dx = pixel_rng.normal();
                let dy = pixel_rng.normal();
                px + Vector2::new(dx, dy) * noise.pixel_sigma
            } else {
                px
            };
            truth.add_observation(Observation {
                image: id,
                landmark: lid,
                pixel: noisy,
            })?;
            visible += 1;
        }
        if visible < MIN_VISIBLE_LANDMARKS {
            return Err(Error::DegenerateScene {
                image: id.0,
                visible,
                required: MIN_VISIBLE_LANDMARKS,
            });
        }
    }

    let initial = perturb(&truth, noise);
    Ok(SceneBundle {
        truth,
        initial,
        metadata: SceneMetadata {
            rig: *rig,
            trajectory: *trajectory,
            landmarks: *landmarks,
            covisibility_window,
            noise: *noise,
        },
        anchors,
    })
}

fn perturb(truth: &RigProblem, noise: &NoiseSpec) -> RigProblem {
    let mut out = truth.clone();
    let mut pose_rng = SceneRng::new(noise.seed, STREAM_POSE);
    let mut body_rotation = Vector3::zeros();
    let mut body_translation = Vector3::zeros();
    let perturb_poses = noise.rotation_sigma > 0.0 || noise.translation_sigma > 0.0;
    for t in truth.time_indices().into_iter().filter(|_| perturb_poses) {
        if noise.accumulate {
            body_rotation += pose_rng.normal3(noise.rotation_sigma);
            body_translation += pose_rng.normal3(noise.translation_sigma);
        }
        let body = Rotation::from_axis_angle(body_rotation);
        for id in [image_a(t), image_b(t)] {
            let Some(im) = out.images.get_mut(&id) else {
                continue;
            };
            let pose = im.pose.expect("ground truth");
            let jitter_r = pose_rng.normal3(noise.rotation_sigma);
            let jitter_c = pose_rng.normal3(noise.translation_sigma);
            let drifted = compose(&pose.rotation, &body);
            im.pose = Some(CameraPose::new(
                compose(&Rotation::from_axis_angle(jitter_r), &drifted),
                pose.center + body_translation + jitter_c,
            ));
        }
    }
    let mut lm_rng = SceneRng::new(noise.seed, STREAM_LANDMARK);
    for x in out
        .landmarks
        .values_mut()
        .flatten()
        .filter(|_| noise.landmark_sigma > 0.0)
    {
        *x += lm_rng.normal3(noise.landmark_sigma);
    }
    out
}
