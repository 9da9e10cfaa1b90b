mod common;

use common::{aligned_pose_errors, noise_free_config, perturbed_scene};
use nalgebra::Vector3;
use rigba::cost::{evaluate_reprojection_cost, RobustLossConfig};
use rigba::error::Error;
use rigba::eval::relative_pose_spread;
use rigba::experiment::ExperimentConfig;
use rigba::experiment::TrajectoryKind::Straight;
use rigba::geometry::{project, CameraPose, Rotation, SimilarityTransform};
use rigba::problem::{ImageId, RigProblem};
use rigba::rig::{compute_relative_pose, evaluate_baseline_cost, RelativePose};
use rigba::sim::{image_a, image_b};
use rigba::solver::{
    assembled_cost, bootstrap, dense_normal_matrix, final_full_iteration, fix_gauge, grow_problem,
    jacobian_structure, reconstruct, resect, solve, solve_unconstrained, total_cost,
    triangulate, BaselineWeighting, Mode, ParamBlock, ResidualCoupling, SolverOptions,
};

fn fixed_intrinsics() -> SolverOptions {
    SolverOptions {
        refine_intrinsics: false,
        ..Default::default()
    }
}

fn noisy_scene(n: u32, seed: u64) -> rigba::sim::SceneBundle {
    ExperimentConfig {
        trajectory: Straight,
        n_time_steps: n,
        n_landmarks: 300,
        seed,
        ..Default::default()
    }
    .generate_scene()
    .unwrap()
}

fn transformed(problem: &RigProblem, s: &SimilarityTransform) -> RigProblem {
    let mut out = problem.clone();
    for im in out.images.values_mut() {
        if let Some(p) = &im.pose {
            im.pose = Some(s.apply_to_pose(p));
        }
    }
    for x in out.landmarks.values_mut().flatten() {
        *x = s.apply(x);
    }
    out.gauge = None;
    out
}

fn some_similarity(scale: f64) -> SimilarityTransform {
    SimilarityTransform::new(
        scale,
        Rotation::from_axis_angle(Vector3::new(0.3, -0.7, 1.1)),
        Vector3::new(4.0, -2.0, 7.5),
    )
    .unwrap()
}

#[test]
fn ground_truth_start_converges_immediately() {
    let bundle = noise_free_config(Straight, 12, 300).generate_scene().unwrap();
    let mut p = bundle.initial.clone();
    let report = solve(&mut p, &SolverOptions::default()).unwrap();
    assert!(report.converged());
    assert!(report.iterations() <= 2, "{} iterations", report.iterations());
    assert!(report.final_cost.reprojection < 1e-16);
}

#[test]
fn small_perturbation_is_recovered_in_both_modes() {
    let bundle = perturbed_scene(Straight, 12, 300, 1e-3, 5);
    for constrained in [true, false] {
        let mut p = bundle.initial.clone();
        let report = if constrained {
            solve(&mut p, &SolverOptions::default()).unwrap()
        } else {
            solve_unconstrained(&mut p, &SolverOptions::default()).unwrap()
        };
        assert!(report.converged());
        assert!(report.final_cost.reprojection < 1e-10);
        let (rot, cen) = aligned_pose_errors(&p, &bundle.truth);
        assert!(rot < 1e-6 && cen < 1e-6, "rotation {rot:e}, center {cen:e}");
    }
}

#[test]
fn zero_lambda_reproduces_unconstrained_trace() {
    let bundle = noisy_scene(10, 3);
    let mut a = bundle.initial.clone();
    a.rig.lambda = 0.0;
    let mut b = bundle.initial.clone();
    let ra = solve(&mut a, &SolverOptions::default()).unwrap();
    let rb = solve_unconstrained(&mut b, &SolverOptions::default()).unwrap();
    assert_eq!(ra.trace.len(), rb.trace.len());
    for (x, y) in ra.trace.iter().zip(&rb.trace) {
        assert!((x.reprojection_cost - y.reprojection_cost).abs() <= 1e-12 * y.reprojection_cost.max(1.0));
        assert!((x.total_cost - y.total_cost).abs() <= 1e-12 * y.total_cost.max(1.0));
        assert_eq!(x.weight, 0.0);
        assert_eq!(x.accepted, y.accepted);
    }
    assert_eq!(ra.termination, rb.termination);
}

#[test]
fn accepted_steps_never_increase_cost() {
    let bundle = noisy_scene(10, 4);
    let mut p = bundle.initial.clone();
    let report = solve(&mut p, &SolverOptions::default()).unwrap();
    let mut last = report.initial.total;
    for rec in &report.trace {
        if rec.accepted {
            assert!(rec.candidate_cost <= last, "{} > {last}", rec.candidate_cost);
            last = rec.candidate_cost;
        }
    }
    assert!(report.final_cost.total <= report.initial.total);
}

#[test]
fn assembled_cost_matches_objective() {
    // Tiny perturbation keeps every residual inside the Huber inlier region.
    let bundle = perturbed_scene(Straight, 8, 200, 1e-5, 2);
    let mut p = bundle.initial.clone();
    fix_gauge(&mut p).unwrap();
    let opts = SolverOptions::default();
    let rel: Vec<RelativePose> = p.relative_poses().into_iter().map(|(_, r)| r).collect();
    let reproj = evaluate_reprojection_cost(&p, &RobustLossConfig::default());
    let baseline = evaluate_baseline_cost(&rel);
    assert!(baseline > 0.0);

    for w in [0.0, 375.0, 500.0] {
        let weighting = BaselineWeighting::Global(w);
        let expected = reproj + w * baseline;
        let assembled = assembled_cost(&p, &opts, &weighting).unwrap();
        let reported = total_cost(&p, &opts, &weighting).total();
        assert!((assembled - expected).abs() <= 1e-10 * expected.max(1.0));
        assert!((reported - expected).abs() <= 1e-10 * expected.max(1.0));
    }

    // Per-pair weights: a link uses the larger weight of its two pairs.
    let weights: std::collections::BTreeMap<u32, f64> =
        (0..8).map(|t| (t, if t == 3 { 500.0 } else { 250.0 })).collect();
    let mut expected = reproj;
    for (i, pair) in rel.windows(2).enumerate() {
        let w = weights[&(i as u32)].max(weights[&(i as u32 + 1)]);
        expected += w * 0.5 * (pair[0].p - pair[1].p).norm_squared();
    }
    let weighting = BaselineWeighting::PerPair(weights);
    let assembled = assembled_cost(&p, &opts, &weighting).unwrap();
    assert!((assembled - expected).abs() <= 1e-10 * expected.max(1.0));
}

#[test]
fn jacobian_couples_only_expected_blocks() {
    let bundle = perturbed_scene(Straight, 6, 150, 1e-3, 1);
    let mut p = bundle.initial.clone();
    fix_gauge(&mut p).unwrap();
    let opts = SolverOptions::default();
    let structure = jacobian_structure(&p, &opts, &BaselineWeighting::Global(500.0)).unwrap();
    let pair_images = |t: u32| [ParamBlock::Pose(image_a(t)), ParamBlock::Pose(image_b(t))];
    let fixed = ParamBlock::Pose(p.gauge.unwrap().fixed_image);
    let mut n_obs = 0;
    let mut n_links = 0;
    for c in structure {
        match c {
            ResidualCoupling::Reprojection { observation, blocks } => {
                let o = p.observations[observation];
                let stream = p.images[&o.image].stream;
                let allowed = [
                    ParamBlock::Pose(o.image),
                    ParamBlock::Landmark(o.landmark),
                    ParamBlock::Intrinsics(stream),
                ];
                assert!(blocks.iter().all(|b| allowed.contains(b)), "{blocks:?}");
                assert!(blocks.contains(&ParamBlock::Landmark(o.landmark)));
                assert!(blocks.contains(&ParamBlock::Intrinsics(stream)));
                assert_eq!(blocks.contains(&ParamBlock::Pose(o.image)), ParamBlock::Pose(o.image) != fixed);
                n_obs += 1;
            }
            ResidualCoupling::Baseline { times, blocks } => {
                assert_eq!(times.1, times.0 + 1);
                let mut allowed = pair_images(times.0).to_vec();
                allowed.extend(pair_images(times.1));
                assert!(blocks.iter().all(|b| allowed.contains(b)), "{blocks:?}");
                assert!(!blocks.contains(&fixed));
                n_links += 1;
            }
        }
    }
    assert_eq!(n_obs, p.observations.len());
    assert_eq!(n_links, 5);
}

#[test]
fn gauge_fixed_normal_matrix_is_nonsingular() {
    let bundle = perturbed_scene(Straight, 3, 60, 1e-3, 9);
    let mut p = bundle.initial.clone();
    let opts = fixed_intrinsics();
    // Without a gauge the seven similarity directions are in the null space.
    fix_gauge(&mut p).unwrap();
    let h = dense_normal_matrix(&p, &opts, &BaselineWeighting::Disabled).unwrap();
    let eig = h.clone().symmetric_eigen().eigenvalues;
    let (min, max) = eig.iter().fold((f64::MAX, 0.0_f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    assert!(min > 1e-12 * max, "smallest eigenvalue {min:e} of {max:e}");
    assert!(h.cholesky().is_some());
}

#[test]
fn reprojection_cost_is_similarity_invariant() {
    let bundle = noisy_scene(8, 1);
    let loss = RobustLossConfig::default();
    let before = evaluate_reprojection_cost(&bundle.initial, &loss);
    let after = evaluate_reprojection_cost(&transformed(&bundle.initial, &some_similarity(2.5)), &loss);
    assert!((before - after).abs() <= 1e-9 * before);
}

#[test]
fn transformed_start_converges_to_same_cost() {
    let bundle = noisy_scene(8, 6);
    // Plain BA is invariant under any similarity; the baseline term only
    // under rigid motions, since its translation part carries scene units.
    for (scale, constrained) in [(2.5, false), (1.0, true)] {
        let s = some_similarity(scale);
        let mut a = bundle.initial.clone();
        let mut b = transformed(&bundle.initial, &s);
        let opts = SolverOptions {
            cost_tolerance: 1e-16,
            parameter_tolerance: 1e-14,
            gradient_tolerance: 1e-12,
            // focal length and depth are nearly interchangeable; refining
            // them leaves a flat valley that two starts end on differently
            refine_intrinsics: false,
            max_iterations: 1000,
            ..Default::default()
        };
        let run = |p: &mut RigProblem| {
            if constrained {
                solve(p, &opts).unwrap()
            } else {
                solve_unconstrained(p, &opts).unwrap()
            }
        };
        let ra = run(&mut a);
        let rb = run(&mut b);
        assert!(
            (ra.final_cost.total - rb.final_cost.total).abs() <= 1e-10 * ra.final_cost.total.max(1.0),
            "{} vs {}",
            ra.final_cost.total,
            rb.final_cost.total
        );
    }
}

#[test]
fn final_pass_on_rigid_rig_uses_low_weight_and_does_not_move() {
    let bundle = noise_free_config(Straight, 10, 300).generate_scene().unwrap();
    let mut p = bundle.initial.clone();
    let report = final_full_iteration(&mut p, &SolverOptions::default()).unwrap();
    assert_eq!(report.pair_weights.len(), 10);
    assert!(report.pair_weights.values().all(|w| *w == 250.0));
    assert!(report.trace.iter().all(|r| r.step_norm < 1e-9));
}

#[test]
fn final_pass_flags_a_corrupted_pair() {
    let bundle = noise_free_config(rigba::experiment::TrajectoryKind::ClosedLoop, 40, 600)
        .generate_scene()
        .unwrap();
    let mut p = bundle.initial.clone();
    let a = *p.pose(image_a(7)).unwrap();
    let mut rel = compute_relative_pose(&a, p.pose(image_b(7)).unwrap());
    // Rotation about y deviates by ten times its nominal value.
    rel.p[1] *= 11.0;
    p.images.get_mut(&image_b(7)).unwrap().pose = Some(rel.place_b(&a));
    let weights = rigba::solver::final_pass_weights(&p).unwrap();
    for (t, w) in &weights {
        assert_eq!(*w, if *t == 7 { 500.0 } else { 250.0 }, "time {t}");
    }
}

#[test]
fn final_pass_requires_every_pair() {
    let bundle = noise_free_config(Straight, 6, 150).generate_scene().unwrap();
    let mut p = bundle.initial.clone();
    p.images.get_mut(&image_b(5)).unwrap().pose = None;
    p.images.get_mut(&image_a(5)).unwrap().pose = None;
    assert!(matches!(
        final_full_iteration(&mut p, &SolverOptions::default()),
        Err(Error::Precondition(_))
    ));
}

#[test]
fn final_pass_reduces_spread_of_drifted_solution() {
    let bundle = noisy_scene(20, 2);
    let opts = fixed_intrinsics();
    let mut p = bundle.initial.clone();
    solve_unconstrained(&mut p, &opts).unwrap();
    let before = relative_pose_spread(&p).unwrap().total();
    final_full_iteration(&mut p, &opts).unwrap();
    let after = relative_pose_spread(&p).unwrap().total();
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn resection_from_true_pose_has_zero_residual() {
    let bundle = noise_free_config(Straight, 8, 200).generate_scene().unwrap();
    let truth = &bundle.truth;
    for id in [image_a(4), image_b(6)] {
        let pose = resect(truth, id, *truth.pose(id).unwrap(), &SolverOptions::default()).unwrap();
        let k = truth.intrinsics_of(id).unwrap();
        for o in truth.observations.iter().filter(|o| o.image == id) {
            let r = o.pixel - project(k, &pose, truth.landmark(o.landmark).unwrap()).unwrap();
            assert!(r.norm() < 1e-12, "{r:?}");
        }
    }
}

#[test]
fn resection_recovers_perturbed_pose() {
    let bundle = noise_free_config(Straight, 8, 200).generate_scene().unwrap();
    let truth = &bundle.truth;
    let id = image_a(3);
    let t = truth.pose(id).unwrap();
    let start = CameraPose::new(
        rigba::geometry::compose(&Rotation::from_axis_angle(Vector3::new(0.01, -0.02, 0.015)), &t.rotation),
        t.center + Vector3::new(0.3, -0.2, 0.1),
    );
    let pose = resect(truth, id, start, &SolverOptions::default()).unwrap();
    assert!(rigba::geometry::rotation_distance(&pose.rotation, &t.rotation) < 1e-9);
    assert!((pose.center - t.center).norm() < 1e-7);
}

#[test]
fn two_view_triangulation_reprojects_exactly() {
    let bundle = noise_free_config(Straight, 6, 150).generate_scene().unwrap();
    let mut p = bundle.truth.unregistered();
    for id in [image_a(0), image_b(0)] {
        p.images.get_mut(&id).unwrap().pose = bundle.truth.pose(id).copied();
    }
    let seen: Vec<_> = p
        .observations
        .iter()
        .filter(|o| o.image == image_a(0))
        .map(|o| o.landmark)
        .filter(|l| p.observations.iter().any(|o| o.image == image_b(0) && o.landmark == *l))
        .collect();
    assert!(seen.len() >= 6);
    for l in seen {
        let x = triangulate(&p, l).expect("wide enough baseline");
        for o in p.observations.iter().filter(|o| o.landmark == l && p.is_registered(o.image)) {
            let k = p.intrinsics_of(o.image).unwrap();
            let r = o.pixel - project(k, p.pose(o.image).unwrap(), &x).unwrap();
            assert!(r.norm() < 1e-9, "{r:?}");
        }
    }
}

#[test]
fn growth_without_overlap_is_reported_and_leaves_problem_untouched() {
    let bundle = ExperimentConfig {
        covisibility_window: 1,
        n_landmarks: 400,
        ..noise_free_config(Straight, 10, 400)
    }
    .generate_scene()
    .unwrap();
    let opts = SolverOptions::default();
    let mut p = bundle.initial.unregistered();
    bootstrap(&mut p, &bundle.initial, 0, &opts).unwrap();
    let snapshot = p.clone();
    let err = grow_problem(&mut p, &bundle.initial, 6, &opts).unwrap_err();
    assert!(matches!(err, Error::InsufficientOverlap { time_index: 6, .. }), "{err}");
    assert_eq!(p, snapshot);
}

#[test]
fn incremental_matches_batch_solve() {
    let bundle = perturbed_scene(Straight, 10, 300, 1e-3, 8);
    let opts = SolverOptions::default();
    let (inc, report) = reconstruct(&bundle.initial, Mode::Constrained, &opts).unwrap();
    assert!(report.skipped.is_empty());
    assert_eq!(report.steps.len(), 10);
    let inc_cost = report.final_report.unwrap().final_cost.total;

    let mut batch = bundle.initial.clone();
    let batch_cost = final_full_iteration(&mut batch, &opts).unwrap().final_cost.total;
    assert!((inc_cost - batch_cost).abs() < 1e-8, "{inc_cost:e} vs {batch_cost:e}");
    let (rot, cen) = aligned_pose_errors(&inc, &bundle.truth);
    assert!(rot < 1e-6 && cen < 1e-6);
}

#[test]
fn incremental_weight_follows_reconstructed_fraction() {
    let bundle = perturbed_scene(Straight, 5, 150, 1e-3, 8);
    let (_, report) = reconstruct(&bundle.initial, Mode::Constrained, &SolverOptions::default()).unwrap();
    for (i, step) in report.steps.iter().enumerate() {
        let expected = 500.0 * ((i + 1) as f64 / 5.0);
        assert!(step.report.trace.iter().all(|r| r.weight == expected), "step {i}");
    }
    let (_, trad) = reconstruct(&bundle.initial, Mode::Traditional, &SolverOptions::default()).unwrap();
    for step in &trad.steps {
        assert!(step.report.trace.iter().all(|r| r.weight == 0.0));
    }
}

#[test]
fn solve_requires_two_posed_images() {
    let bundle = noise_free_config(Straight, 4, 100).generate_scene().unwrap();
    let mut p = bundle.initial.unregistered();
    p.images.get_mut(&ImageId(0)).unwrap().pose = bundle.initial.pose(ImageId(0)).copied();
    assert!(matches!(fix_gauge(&mut p), Err(Error::Gauge(_))));
}
