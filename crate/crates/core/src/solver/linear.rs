//! Parameter layout, linearization and the damped normal equations.
//!
//! Camera-side parameters (poses and per-stream intrinsics) form a dense
//! reduced system; landmarks are eliminated with the Schur complement since
//! their Hessian blocks are 3x3 and independent of each other.

use nalgebra::{
    Cholesky, DMatrix, DVector, Matrix2x3, Matrix3, Matrix3x2, SMatrix, Vector2, Vector3, Vector6,
};
use std::collections::HashMap;

use crate::cost::{huber_unchecked, linearize};
use crate::error::{Error, Result};
use crate::geometry::{compose, Rotation};
use crate::problem::{ImageId, LandmarkId, RigProblem, StreamId};
use crate::rig::relative_pose_jacobians;

use super::{BaselineWeighting, SolverOptions};

const MIN_DIAGONAL: f64 = 1e-6;
const MAX_DIAGONAL: f64 = 1e32;

/// A parameter block that residuals can couple to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamBlock {
    Pose(ImageId),
    Landmark(LandmarkId),
    Intrinsics(StreamId),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CamBlock {
    pub offset: usize,
    pub dim: usize,
    pub key: ParamBlock,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum PoseParam {
    /// Rotation increment and free center.
    Full,
    /// Rotation increment and a two-dimensional tangent step of the center on
    /// the sphere of radius `distance` around `anchor`.
    Anchored {
        anchor: Vector3<f64>,
        distance: f64,
        basis: Matrix3x2<f64>,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub blocks: Vec<CamBlock>,
    pub poses: HashMap<ImageId, (usize, PoseParam)>,
    pub intrinsics: HashMap<StreamId, usize>,
    pub landmarks: Vec<LandmarkId>,
    pub landmark_slot: HashMap<LandmarkId, usize>,
    pub camera_dim: usize,
}

fn tangent_basis(u: &Vector3<f64>) -> Matrix3x2<f64> {
    let a = if u.x.abs() <= u.y.abs() && u.x.abs() <= u.z.abs() {
        Vector3::x()
    } else if u.y.abs() <= u.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let b1 = u.cross(&a).normalize();
    let b2 = u.cross(&b1);
    Matrix3x2::from_columns(&[b1, b2])
}

impl Layout {
    pub fn new(problem: &RigProblem, options: &SolverOptions) -> Result<Self> {
        let gauge = problem
            .gauge
            .ok_or_else(|| Error::Precondition("gauge is not fixed".into()))?;
        let anchor = *problem.pose(gauge.fixed_image).ok_or_else(|| {
            Error::Gauge(format!("gauge image {} has no pose", gauge.fixed_image))
        })?;

        let mut blocks = Vec::new();
        let mut poses = HashMap::new();
        let mut offset = 0;
        for im in problem.images.values() {
            let Some(pose) = im.pose else { continue };
            if im.id == gauge.fixed_image {
                continue;
            }
            let (param, dim) = if im.id == gauge.scale_image {
                let d = pose.center - anchor.center;
                let n = d.norm();
                if n == 0.0 {
                    return Err(Error::Gauge(
                        "scale image coincides with the fixed image".into(),
                    ));
                }
                (
                    PoseParam::Anchored {
                        anchor: anchor.center,
                        distance: gauge.distance,
                        basis: tangent_basis(&(d / n)),
                    },
                    5,
                )
            } else {
                (PoseParam::Full, 6)
            };
            poses.insert(im.id, (blocks.len(), param));
            blocks.push(CamBlock {
                offset,
                dim,
                key: ParamBlock::Pose(im.id),
            });
            offset += dim;
        }

        let mut intrinsics = HashMap::new();
        if options.refine_intrinsics {
            for sid in problem.streams.keys() {
                let used = problem
                    .images
                    .values()
                    .any(|im| im.stream == *sid && im.pose.is_some());
                if used {
                    intrinsics.insert(*sid, blocks.len());
                    blocks.push(CamBlock {
                        offset,
                        dim: 5,
                        key: ParamBlock::Intrinsics(*sid),
                    });
                    offset += 5;
                }
            }
        }

        let mut counts: HashMap<LandmarkId, usize> = HashMap::new();
        for o in problem.active_observations() {
            *counts.entry(o.landmark).or_default() += 1;
        }
        let mut landmarks = Vec::new();
        let mut landmark_slot = HashMap::new();
        for (id, pos) in &problem.landmarks {
            if pos.is_some() && counts.get(id).copied().unwrap_or(0) >= 2 {
                landmark_slot.insert(*id, landmarks.len());
                landmarks.push(*id);
            }
        }

        Ok(Self {
            blocks,
            poses,
            intrinsics,
            landmarks,
            landmark_slot,
            camera_dim: offset,
        })
    }

    pub fn total_dim(&self) -> usize {
        self.camera_dim + 3 * self.landmarks.len()
    }

    /// Maps a full 6-column pose Jacobian onto the block's local parameters.
    fn project_pose_jacobian<const R: usize>(
        &self,
        block: usize,
        j: &SMatrix<f64, R, 6>,
    ) -> SMatrix<f64, R, 6> {
        let key = match self.blocks[block].key {
            ParamBlock::Pose(id) => id,
            _ => unreachable!(),
        };
        match self.poses[&key].1 {
            PoseParam::Full => *j,
            PoseParam::Anchored { basis, .. } => {
                let mut out = SMatrix::<f64, R, 6>::zeros();
                out.fixed_columns_mut::<3>(0)
                    .copy_from(&j.fixed_columns::<3>(0));
                let centered = j.fixed_columns::<3>(3) * basis;
                out.fixed_columns_mut::<2>(3).copy_from(&centered);
                out
            }
        }
    }

    /// Applies a step to a copy of the problem.
    pub fn retract(
        &self,
        problem: &RigProblem,
        dc: &DVector<f64>,
        dl: &[Vector3<f64>],
    ) -> RigProblem {
        let mut out = problem.clone();
        for (id, (block, param)) in &self.poses {
            let off = self.blocks[*block].offset;
            let im = out.images.get_mut(id).expect("layout image");
            let pose = im.pose.as_mut().expect("layout pose");
            let w = Vector3::new(dc[off], dc[off + 1], dc[off + 2]);
            pose.rotation = compose(&Rotation::from_axis_angle(w), &pose.rotation);
            match param {
                PoseParam::Full => {
                    pose.center += Vector3::new(dc[off + 3], dc[off + 4], dc[off + 5]);
                }
                PoseParam::Anchored {
                    anchor,
                    distance,
                    basis,
                } => {
                    let step = basis * nalgebra::Vector2::new(dc[off + 3], dc[off + 4]);
                    let dir = (pose.center - anchor + step).normalize();
                    pose.center = anchor + dir * *distance;
                }
            }
        }
        for (sid, block) in &self.intrinsics {
            let off = self.blocks[*block].offset;
            let k = out.streams.get_mut(sid).expect("layout stream");
            let mut a = k.to_array();
            for (i, v) in a.iter_mut().enumerate() {
                *v += dc[off + i];
            }
            *k = crate::geometry::Intrinsics::from_array(a);
        }
        for (slot, id) in self.landmarks.iter().enumerate() {
            if let Some(Some(x)) = out.landmarks.get_mut(id) {
                *x += dl[slot];
            }
        }
        place_single_view_landmarks(&mut out);
        out
    }

    pub fn parameter_norm(&self, problem: &RigProblem) -> f64 {
        let mut s = 0.0;
        for id in self.poses.keys() {
            let p = problem.pose(*id).expect("layout pose");
            s += p.rotation.axis_angle().norm_squared() + p.center.norm_squared();
        }
        for sid in self.intrinsics.keys() {
            s += problem.streams[sid]
                .to_array()
                .iter()
                .map(|v| v * v)
                .sum::<f64>();
        }
        for id in &self.landmarks {
            s += problem
                .landmark(*id)
                .expect("layout landmark")
                .norm_squared();
        }
        s.sqrt()
    }
}

/// Moves every landmark with a single active observation onto that
/// observation's viewing ray, keeping its depth. Such a landmark can always
/// reach a zero residual, so this eliminates it from the objective exactly.
/// Points behind their camera are left alone.
pub(crate) fn place_single_view_landmarks(problem: &mut RigProblem) {
    let mut seen: HashMap<LandmarkId, (usize, usize)> = HashMap::new();
    for (idx, o) in problem.observations.iter().enumerate() {
        if problem.is_registered(o.image) && problem.landmark(o.landmark).is_some() {
            let e = seen.entry(o.landmark).or_insert((0, idx));
            e.0 += 1;
        }
    }
    for (id, (count, idx)) in seen {
        if count != 1 {
            continue;
        }
        let o = problem.observations[idx];
        let pose = *problem.pose(o.image).expect("registered");
        let k = *problem.intrinsics_of(o.image).expect("validated problem");
        let x = problem.landmark(id).expect("estimated");
        let depth = pose.to_camera(x).z;
        if depth <= crate::geometry::DEPTH_EPSILON {
            continue;
        }
        let n = k.unproject(&o.pixel);
        let pc = Vector3::new(n.x, n.y, 1.0) * depth;
        let placed = pose.rotation.inverse().rotate(&pc) + pose.center;
        problem.landmarks.insert(id, Some(placed));
    }
}

/// One weighted reprojection term.
#[derive(Debug, Clone)]
pub(crate) struct ObsTerm {
    pub observation: usize,
    pub pose: Option<usize>,
    pub intrinsics: Option<usize>,
    pub landmark: Option<usize>,
    pub r: Vector2<f64>,
    pub jp: SMatrix<f64, 2, 6>,
    pub jk: SMatrix<f64, 2, 5>,
    pub jl: Matrix2x3<f64>,
}

/// One weighted baseline term linking two consecutive reconstructed pairs.
#[derive(Debug, Clone)]
pub(crate) struct LinkTerm {
    pub times: (u32, u32),
    pub poses: [Option<usize>; 4],
    pub r: Vector6<f64>,
    pub j: [SMatrix<f64, 6, 6>; 4],
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostBreakdown {
    pub reprojection: f64,
    /// Unweighted `1/2 sum |p_i - p_{i+1}|^2` (after component scaling).
    pub baseline: f64,
    /// Baseline contribution to the objective, weights included.
    pub weighted_baseline: f64,
    pub n_dropped: usize,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.reprojection + self.weighted_baseline
    }
}

/// Weight of each consecutive link, keyed by the time indices it connects.
pub(crate) fn link_weights(
    problem: &RigProblem,
    weighting: &BaselineWeighting,
) -> Vec<((u32, u32), f64)> {
    let pairs = problem.reconstructed_pairs();
    pairs
        .windows(2)
        .filter_map(|w| {
            let key = (w[0].time_index, w[1].time_index);
            match weighting {
                BaselineWeighting::Disabled => None,
                BaselineWeighting::Global(g) => Some((key, *g)),
                BaselineWeighting::PerPair(m) => {
                    let a = m.get(&key.0).copied().unwrap_or(0.0);
                    let b = m.get(&key.1).copied().unwrap_or(0.0);
                    Some((key, a.max(b)))
                }
            }
        })
        .collect()
}

/// Objective value with the same residual definitions the linearization uses.
pub(crate) fn evaluate_cost(
    problem: &RigProblem,
    options: &SolverOptions,
    weighting: &BaselineWeighting,
) -> CostBreakdown {
    let rc = crate::cost::reprojection_cost(problem, &options.loss);
    let mut out = CostBreakdown {
        reprojection: rc.cost,
        n_dropped: rc.n_dropped,
        ..Default::default()
    };
    let scale = Vector6::from_column_slice(&problem.rig.component_scale);
    let rel: HashMap<u32, Vector6<f64>> = problem
        .relative_poses()
        .into_iter()
        .map(|(pair, p)| (pair.time_index, p.p))
        .collect();
    for ((ta, tb), w) in link_weights(problem, weighting) {
        let d = (rel[&ta] - rel[&tb]).component_mul(&scale);
        let c = 0.5 * d.norm_squared();
        out.baseline += c;
        out.weighted_baseline += w * c;
    }
    out
}

pub(crate) struct Linearization {
    pub obs: Vec<ObsTerm>,
    pub links: Vec<LinkTerm>,
}

pub(crate) fn linearize_problem(
    problem: &RigProblem,
    layout: &Layout,
    options: &SolverOptions,
    weighting: &BaselineWeighting,
) -> Linearization {
    let mut rotations: HashMap<ImageId, Matrix3<f64>> = HashMap::new();
    for im in problem.images.values() {
        if let Some(p) = &im.pose {
            rotations.insert(im.id, p.rotation.matrix());
        }
    }
    let mut obs = Vec::with_capacity(problem.observations.len());
    for (idx, o) in problem.observations.iter().enumerate() {
        let (Some(pose), Some(x)) = (problem.pose(o.image), problem.landmark(o.landmark)) else {
            continue;
        };
        let im = &problem.images[&o.image];
        let k = &problem.streams[&im.stream];
        let Ok((r, jac)) = linearize(&o.pixel, &rotations[&o.image], &pose.center, x, k) else {
            continue;
        };
        let (_, drho) = huber_unchecked(r.norm_squared(), options.loss.huber_delta);
        let sw = drho.sqrt();
        // A landmark seen once is held on its viewing ray (see
        // `place_single_view_landmarks`), so its residual carries no
        // information about the cameras.
        let landmark = layout.landmark_slot.get(&o.landmark).copied();
        let pose_block = landmark.and(layout.poses.get(&o.image).map(|(b, _)| *b));
        let jp = match pose_block {
            Some(b) => layout.project_pose_jacobian(b, &jac.pose) * sw,
            None => SMatrix::zeros(),
        };
        obs.push(ObsTerm {
            observation: idx,
            pose: pose_block,
            intrinsics: landmark.and(layout.intrinsics.get(&im.stream).copied()),
            landmark,
            r: r * sw,
            jp,
            jk: jac.intrinsics * sw,
            jl: jac.landmark * sw,
        });
    }

    let scale = Vector6::from_column_slice(&problem.rig.component_scale);
    let scale_m = SMatrix::<f64, 6, 6>::from_diagonal(&scale);
    let mut rel = HashMap::new();
    for pair in problem.reconstructed_pairs() {
        let a = problem.pose(pair.image_a).expect("reconstructed");
        let b = problem.pose(pair.image_b).expect("reconstructed");
        rel.insert(pair.time_index, (pair, relative_pose_jacobians(a, b)));
    }
    let mut links = Vec::new();
    for ((ta, tb), w) in link_weights(problem, weighting) {
        let sw = w.sqrt();
        let (pa, (p_i, ja_i, jb_i)) = &rel[&ta];
        let (pb, (p_n, ja_n, jb_n)) = &rel[&tb];
        let images = [pa.image_a, pa.image_b, pb.image_a, pb.image_b];
        let raw = [*ja_i, *jb_i, -ja_n, -jb_n];
        let mut poses = [None; 4];
        let mut j = [SMatrix::<f64, 6, 6>::zeros(); 4];
        for k in 0..4 {
            if let Some((block, _)) = layout.poses.get(&images[k]) {
                poses[k] = Some(*block);
                j[k] = layout.project_pose_jacobian(*block, &(scale_m * raw[k] * sw));
            }
        }
        links.push(LinkTerm {
            times: (ta, tb),
            poses,
            r: (p_i.p - p_n.p).component_mul(&scale) * sw,
            j,
        });
    }
    Linearization { obs, links }
}

/// Assembled Gauss-Newton system, split into camera and landmark parts.
pub(crate) struct NormalEquations {
    pub u: DMatrix<f64>,
    pub gc: DVector<f64>,
    pub v: Vec<Matrix3<f64>>,
    pub gl: Vec<Vector3<f64>>,
    /// Per landmark: camera blocks it couples to with `J_c^T J_l` (rows padded to 6).
    pub w: Vec<Vec<(usize, SMatrix<f64, 6, 3>)>>,
}

fn add_block(
    m: &mut DMatrix<f64>,
    ro: usize,
    co: usize,
    rd: usize,
    cd: usize,
    b: &SMatrix<f64, 6, 6>,
) {
    for i in 0..rd {
        for k in 0..cd {
            m[(ro + i, co + k)] += b[(i, k)];
        }
    }
}

impl NormalEquations {
    pub fn build(lin: &Linearization, layout: &Layout) -> Self {
        let c = layout.camera_dim;
        let nl = layout.landmarks.len();
        let mut u = DMatrix::zeros(c, c);
        let mut gc = DVector::zeros(c);
        let mut v = vec![Matrix3::zeros(); nl];
        let mut gl = vec![Vector3::zeros(); nl];
        let mut w: Vec<Vec<(usize, SMatrix<f64, 6, 3>)>> = vec![Vec::new(); nl];

        for t in &lin.obs {
            // camera-side Jacobian blocks, padded to 6 columns
            let mut cam: [(Option<usize>, SMatrix<f64, 2, 6>); 2] =
                [(t.pose, t.jp), (t.intrinsics, SMatrix::zeros())];
            cam[1].1.fixed_columns_mut::<5>(0).copy_from(&t.jk);
            for (bi, ji) in cam.iter() {
                let Some(bi) = bi else { continue };
                let bi_blk = layout.blocks[*bi];
                let g = ji.transpose() * t.r;
                for k in 0..bi_blk.dim {
                    gc[bi_blk.offset + k] += g[k];
                }
                for (bj, jj) in cam.iter() {
                    let Some(bj) = bj else { continue };
                    let bj_blk = layout.blocks[*bj];
                    add_block(
                        &mut u,
                        bi_blk.offset,
                        bj_blk.offset,
                        bi_blk.dim,
                        bj_blk.dim,
                        &(ji.transpose() * jj),
                    );
                }
                if let Some(l) = t.landmark {
                    let wij = ji.transpose() * t.jl;
                    match w[l].iter_mut().find(|(b, _)| b == bi) {
                        Some(entry) => entry.1 += wij,
                        None => w[l].push((*bi, wij)),
                    }
                }
            }
            if let Some(l) = t.landmark {
                v[l] += t.jl.transpose() * t.jl;
                gl[l] += t.jl.transpose() * t.r;
            }
        }

        for link in &lin.links {
            for a in 0..4 {
                let Some(ba) = link.poses[a] else { continue };
                let blk_a = layout.blocks[ba];
                let g = link.j[a].transpose() * link.r;
                for k in 0..blk_a.dim {
                    gc[blk_a.offset + k] += g[k];
                }
                for b in 0..4 {
                    let Some(bb) = link.poses[b] else { continue };
                    let blk_b = layout.blocks[bb];
                    add_block(
                        &mut u,
                        blk_a.offset,
                        blk_b.offset,
                        blk_a.dim,
                        blk_b.dim,
                        &(link.j[a].transpose() * link.j[b]),
                    );
                }
            }
        }
        Self { u, gc, v, gl, w }
    }

    pub fn gradient_max_norm(&self) -> f64 {
        let a = self.gc.amax();
        let b = self.gl.iter().map(|g| g.amax()).fold(0.0, f64::max);
        a.max(b)
    }

    /// Solves `(H + mu D) delta = -g` by eliminating landmarks.
    /// Returns the camera step, landmark steps and the predicted decrease of
    /// the linearized model.
    pub fn solve_damped(
        &self,
        layout: &Layout,
        mu: f64,
    ) -> Option<(DVector<f64>, Vec<Vector3<f64>>, f64)> {
        let c = layout.camera_dim;
        let du: Vec<f64> = (0..c)
            .map(|i| self.u[(i, i)].clamp(MIN_DIAGONAL, MAX_DIAGONAL))
            .collect();
        let mut s = self.u.clone();
        for i in 0..c {
            s[(i, i)] += mu * du[i];
        }
        let mut rhs = -&self.gc;
        let mut vinv = Vec::with_capacity(self.v.len());
        let mut dv = Vec::with_capacity(self.v.len());
        for (l, vl) in self.v.iter().enumerate() {
            let d = Vector3::new(
                vl[(0, 0)].clamp(MIN_DIAGONAL, MAX_DIAGONAL),
                vl[(1, 1)].clamp(MIN_DIAGONAL, MAX_DIAGONAL),
                vl[(2, 2)].clamp(MIN_DIAGONAL, MAX_DIAGONAL),
            );
            let damped = vl + Matrix3::from_diagonal(&(d * mu));
            let inv = damped.try_inverse()?;
            let wl = &self.w[l];
            let vg = inv * self.gl[l];
            for (a, wa) in wl {
                let ba = layout.blocks[*a];
                let t = wa * vg;
                for k in 0..ba.dim {
                    rhs[ba.offset + k] += t[k];
                }
                let wv = wa * inv;
                for (b, wb) in wl {
                    let bb = layout.blocks[*b];
                    let m = wv * wb.transpose();
                    for i in 0..ba.dim {
                        for k in 0..bb.dim {
                            s[(ba.offset + i, bb.offset + k)] -= m[(i, k)];
                        }
                    }
                }
            }
            vinv.push(inv);
            dv.push(d);
        }

        let dc = if c == 0 {
            DVector::zeros(0)
        } else {
            Cholesky::new(s)?.solve(&rhs)
        };
        if dc.iter().any(|v| !v.is_finite()) {
            return None;
        }

        let mut dl = Vec::with_capacity(self.v.len());
        for (l, inv) in vinv.iter().enumerate() {
            let mut t = -self.gl[l];
            for (a, wa) in &self.w[l] {
                let ba = layout.blocks[*a];
                let mut x = SMatrix::<f64, 6, 1>::zeros();
                for k in 0..ba.dim {
                    x[k] = dc[ba.offset + k];
                }
                t -= wa.transpose() * x;
            }
            dl.push(inv * t);
        }

        // predicted = 1/2 (mu d^T D d - g^T d)
        let mut dd = 0.0;
        let mut gd = 0.0;
        for i in 0..c {
            dd += du[i] * dc[i] * dc[i];
            gd += self.gc[i] * dc[i];
        }
        for (l, x) in dl.iter().enumerate() {
            dd += dv[l].component_mul(x).dot(x);
            gd += self.gl[l].dot(x);
        }
        let predicted = 0.5 * (mu * dd - gd);
        Some((dc, dl, predicted))
    }
}

/// Parameter blocks each residual touches, in assembly order. The
/// reprojection entries come first (one per linearized observation), then
/// the baseline links.
#[derive(Debug, Clone, PartialEq)]
pub enum ResidualCoupling {
    Reprojection {
        observation: usize,
        blocks: Vec<ParamBlock>,
    },
    Baseline {
        times: (u32, u32),
        blocks: Vec<ParamBlock>,
    },
}

pub(crate) fn coupling(
    lin: &Linearization,
    layout: &Layout,
    problem: &RigProblem,
) -> Vec<ResidualCoupling> {
    let key = |b: usize| layout.blocks[b].key;
    let mut out = Vec::new();
    for t in &lin.obs {
        let mut blocks = Vec::new();
        blocks.extend(t.pose.map(key));
        blocks.extend(t.intrinsics.map(key));
        if t.landmark.is_some() {
            blocks.push(ParamBlock::Landmark(
                problem.observations[t.observation].landmark,
            ));
        }
        out.push(ResidualCoupling::Reprojection {
            observation: t.observation,
            blocks,
        });
    }
    for link in &lin.links {
        out.push(ResidualCoupling::Baseline {
            times: link.times,
            blocks: link.poses.iter().flatten().map(|b| key(*b)).collect(),
        });
    }
    out
}

/// Dense Jacobian of all weighted residuals w.r.t. the free parameters,
/// together with the stacked residual vector. Column order: camera blocks
/// by offset, then landmarks.
pub(crate) fn dense_jacobian(lin: &Linearization, layout: &Layout) -> (DMatrix<f64>, DVector<f64>) {
    let rows = 2 * lin.obs.len() + 6 * lin.links.len();
    let cols = layout.total_dim();
    let mut j = DMatrix::zeros(rows, cols);
    let mut r = DVector::zeros(rows);
    let mut row = 0;
    for t in &lin.obs {
        for i in 0..2 {
            r[row + i] = t.r[i];
            if let Some(b) = t.pose {
                let blk = layout.blocks[b];
                for k in 0..blk.dim {
                    j[(row + i, blk.offset + k)] = t.jp[(i, k)];
                }
            }
            if let Some(b) = t.intrinsics {
                let blk = layout.blocks[b];
                for k in 0..5 {
                    j[(row + i, blk.offset + k)] = t.jk[(i, k)];
                }
            }
            if let Some(l) = t.landmark {
                for k in 0..3 {
                    j[(row + i, layout.camera_dim + 3 * l + k)] = t.jl[(i, k)];
                }
            }
        }
        row += 2;
    }
    for link in &lin.links {
        for i in 0..6 {
            r[row + i] = link.r[i];
            for a in 0..4 {
                if let Some(b) = link.poses[a] {
                    let blk = layout.blocks[b];
                    for k in 0..blk.dim {
                        j[(row + i, blk.offset + k)] += link.j[a][(i, k)];
                    }
                }
            }
        }
        row += 6;
    }
    (j, r)
}
