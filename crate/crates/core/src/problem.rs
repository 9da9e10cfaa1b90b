//! The optimization state shared by the solver, simulator, file format and
//! evaluation.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::{CameraPose, Intrinsics};
use crate::rig::{compute_relative_pose, ConstraintWeights, RelativePose};

macro_rules! id_type {
    ($name:ident) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(StreamId);
id_type!(ImageId);
id_type!(LandmarkId);

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub id: ImageId,
    pub stream: StreamId,
    pub time_index: u32,
    /// `None` until the image has been registered into the reconstruction.
    pub pose: Option<CameraPose>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub image: ImageId,
    pub landmark: LandmarkId,
    pub pixel: Vector2<f64>,
}

/// The two images captured by cameras A and B at one time index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RigPair {
    pub time_index: u32,
    pub image_a: ImageId,
    pub image_b: ImageId,
}

/// Settings of the baseline constraint that do not depend on problem size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigSettings {
    pub lambda: f64,
    pub lambda_low: f64,
    pub outlier_factor: f64,
    /// Diagonal scaling applied to baseline residual components
    /// (rotation xyz, translation xyz).
    pub component_scale: [f64; 6],
}

impl Default for RigSettings {
    fn default() -> Self {
        Self {
            lambda: 500.0,
            lambda_low: 250.0,
            outlier_factor: 5.0,
            component_scale: [1.0; 6],
        }
    }
}

/// Which parameters are held fixed to remove the similarity ambiguity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gauge {
    /// Pose held constant.
    pub fixed_image: ImageId,
    /// Image whose center is constrained to stay at `distance` from the fixed
    /// image's center.
    pub scale_image: ImageId,
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RigProblem {
    pub streams: BTreeMap<StreamId, Intrinsics>,
    pub images: BTreeMap<ImageId, Image>,
    pub landmarks: BTreeMap<LandmarkId, Option<Vector3<f64>>>,
    pub observations: Vec<Observation>,
    pub rig_pairs: Vec<RigPair>,
    pub rig: RigSettings,
    pub gauge: Option<Gauge>,
}

impl RigProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_stream(&mut self, id: StreamId, intrinsics: Intrinsics) -> Result<()> {
        if self.streams.insert(id, intrinsics).is_some() {
            return Err(Error::Precondition(format!("duplicate stream id {id}")));
        }
        Ok(())
    }

    pub fn add_image(&mut self, image: Image) -> Result<()> {
        if !self.streams.contains_key(&image.stream) {
            return Err(Error::Precondition(format!(
                "image {} references unknown stream {}",
                image.id, image.stream
            )));
        }
        if self.images.contains_key(&image.id) {
            return Err(Error::Precondition(format!(
                "duplicate image id {}",
                image.id
            )));
        }
        self.images.insert(image.id, image);
        Ok(())
    }

    pub fn add_landmark(&mut self, id: LandmarkId, position: Option<Vector3<f64>>) -> Result<()> {
        if let Some(p) = position {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::Domain(format!(
                    "landmark {id} has non-finite coordinates"
                )));
            }
        }
        if self.landmarks.insert(id, position).is_some() {
            return Err(Error::Precondition(format!("duplicate landmark id {id}")));
        }
        Ok(())
    }

    pub fn add_observation(&mut self, obs: Observation) -> Result<()> {
        if !self.images.contains_key(&obs.image) {
            return Err(Error::Precondition(format!(
                "observation references unknown image {}",
                obs.image
            )));
        }
        if !self.landmarks.contains_key(&obs.landmark) {
            return Err(Error::Precondition(format!(
                "observation references unknown landmark {}",
                obs.landmark
            )));
        }
        self.observations.push(obs);
        Ok(())
    }

    pub fn add_rig_pair(&mut self, pair: RigPair) -> Result<()> {
        let (a, b) = match (
            self.images.get(&pair.image_a),
            self.images.get(&pair.image_b),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::Precondition(format!(
                    "rig pair at time {} references a missing image ({} / {})",
                    pair.time_index, pair.image_a, pair.image_b
                )))
            }
        };
        if a.stream == b.stream {
            return Err(Error::Precondition(format!(
                "rig pair at time {} has both images in stream {}",
                pair.time_index, a.stream
            )));
        }
        if self
            .rig_pairs
            .iter()
            .any(|p| p.time_index == pair.time_index)
        {
            return Err(Error::Precondition(format!(
                "duplicate rig pair at time {}",
                pair.time_index
            )));
        }
        let at = self
            .rig_pairs
            .partition_point(|p| p.time_index < pair.time_index);
        self.rig_pairs.insert(at, pair);
        Ok(())
    }

    pub fn pose(&self, id: ImageId) -> Option<&CameraPose> {
        self.images.get(&id).and_then(|im| im.pose.as_ref())
    }

    pub fn landmark(&self, id: LandmarkId) -> Option<&Vector3<f64>> {
        self.landmarks.get(&id).and_then(|l| l.as_ref())
    }

    pub fn intrinsics_of(&self, image: ImageId) -> Option<&Intrinsics> {
        self.images
            .get(&image)
            .and_then(|im| self.streams.get(&im.stream))
    }

    pub fn is_registered(&self, image: ImageId) -> bool {
        self.pose(image).is_some()
    }

    pub fn n_registered_images(&self) -> usize {
        self.images.values().filter(|im| im.pose.is_some()).count()
    }

    pub fn n_total_pairs(&self) -> usize {
        self.rig_pairs.len()
    }

    /// Rig pairs whose two images both have poses, ordered by time index.
    pub fn reconstructed_pairs(&self) -> Vec<RigPair> {
        self.rig_pairs
            .iter()
            .filter(|p| self.is_registered(p.image_a) && self.is_registered(p.image_b))
            .copied()
            .collect()
    }

    pub fn n_reconstructed_pairs(&self) -> usize {
        self.reconstructed_pairs().len()
    }

    /// Constraint weights with the pair counts taken from the current state.
    pub fn constraint_weights(&self) -> ConstraintWeights {
        ConstraintWeights {
            lambda: self.rig.lambda,
            lambda_low: self.rig.lambda_low,
            outlier_factor: self.rig.outlier_factor,
            n_reconstructed_pairs: self.n_reconstructed_pairs(),
            n_total_pairs: self.n_total_pairs(),
        }
    }

    /// Relative orientation of every reconstructed pair, ordered by time.
    pub fn relative_poses(&self) -> Vec<(RigPair, RelativePose)> {
        self.reconstructed_pairs()
            .into_iter()
            .map(|pair| {
                let a = self.pose(pair.image_a).expect("reconstructed pair");
                let b = self.pose(pair.image_b).expect("reconstructed pair");
                (pair, compute_relative_pose(a, b))
            })
            .collect()
    }

    /// Observations whose image and landmark are both currently estimated.
    pub fn active_observations(&self) -> impl Iterator<Item = &Observation> {
        self.observations
            .iter()
            .filter(move |o| self.is_registered(o.image) && self.landmark(o.landmark).is_some())
    }

    pub fn observations_by_image(&self) -> BTreeMap<ImageId, Vec<usize>> {
        let mut out: BTreeMap<ImageId, Vec<usize>> = BTreeMap::new();
        for (k, o) in self.observations.iter().enumerate() {
            out.entry(o.image).or_default().push(k);
        }
        out
    }

    pub fn time_indices(&self) -> BTreeSet<u32> {
        self.images.values().map(|im| im.time_index).collect()
    }

    /// Checks every cross-reference and the rig-pair invariants.
    pub fn validate(&self) -> Result<()> {
        for im in self.images.values() {
            if !self.streams.contains_key(&im.stream) {
                return Err(Error::Precondition(format!(
                    "image {} references unknown stream {}",
                    im.id, im.stream
                )));
            }
        }
        for o in &self.observations {
            if !self.images.contains_key(&o.image) || !self.landmarks.contains_key(&o.landmark) {
                return Err(Error::Precondition(format!(
                    "observation ({}, {}) references a missing id",
                    o.image, o.landmark
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for p in &self.rig_pairs {
            let (a, b) = match (self.images.get(&p.image_a), self.images.get(&p.image_b)) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::Precondition(format!(
                        "rig pair at time {} references a missing image",
                        p.time_index
                    )))
                }
            };
            if a.stream == b.stream {
                return Err(Error::Precondition(format!(
                    "rig pair at time {} has both images in one stream",
                    p.time_index
                )));
            }
            if !seen.insert(p.time_index) {
                return Err(Error::Precondition(format!(
                    "duplicate rig pair at time {}",
                    p.time_index
                )));
            }
        }
        Ok(())
    }

    /// Copy of this problem with every pose and landmark cleared, keeping the
    /// topology and intrinsics.
    pub fn unregistered(&self) -> Self {
        let mut out = self.clone();
        for im in out.images.values_mut() {
            im.pose = None;
        }
        for l in out.landmarks.values_mut() {
            *l = None;
        }
        out.gauge = None;
        out
    }
}
