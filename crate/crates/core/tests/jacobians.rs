mod common;

use common::{jacobian_error, random_block};
use proptest::prelude::*;
use rigba::cost::{evaluate_reprojection_cost, RobustLossConfig};
use rigba::experiment::TrajectoryKind;
use rigba::sim::SceneRng;

#[test]
fn reprojection_jacobians_match_central_differences() {
    let mut rng = SceneRng::new(11, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        let block = random_block(&mut rng);
        worst = worst.max(jacobian_error(&block, 1e-6));
    }
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn cost_is_permutation_invariant() {
    let mut bundle = common::perturbed_scene(TrajectoryKind::Straight, 8, 200, 1e-2, 3);
    let loss = RobustLossConfig::default();
    let before = evaluate_reprojection_cost(&bundle.initial, &loss);
    let mut rng = SceneRng::new(5, 0);
    let obs = &mut bundle.initial.observations;
    for i in (1..obs.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        obs.swap(i, j);
    }
    let after = evaluate_reprojection_cost(&bundle.initial, &loss);
    assert!(before > 0.0);
    assert!((before - after).abs() <= 1e-12 * before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn jacobians_hold_for_any_seed(seed in any::<u64>()) {
        let mut rng = SceneRng::new(seed, 0);
        let block = random_block(&mut rng);
        prop_assert!(jacobian_error(&block, 1e-6) < 1e-5);
    }
}
