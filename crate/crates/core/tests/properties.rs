use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng;

use rigidpack::assignment::{lsa_solve, plan_round, sinkhorn, CostMatrix};
use rigidpack::losses::{loss_geom, loss_rmsd, loss_star, relative_rmsd, LossKind};
use rigidpack::metrics::{cost_matrix, metric, metric_star, pm_atom, reconstruct_positions, rmsd_atom};
use rigidpack::random;
use rigidpack::rigid_body::apply_transform;
use rigidpack::se3::{compose, slerp};
use rigidpack::{AssignmentMode, CostKind, MetricKind, RigidTransform};

fn brute_cost(c: &CostMatrix) -> f64 {
    fn go(c: &CostMatrix, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        let n = c.size();
        if row == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                go(c, row + 1, used, acc + c.get(row, j), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(c, 0, &mut vec![false; c.size()], 0.0, &mut best);
    best
}

fn uniform_matrix(seed: u64, n: usize) -> CostMatrix {
    let mut rng = random::rng(seed);
    CostMatrix::from_fn(n, |_, _| rng.random::<f64>()).unwrap()
}

proptest! {
    #[test]
    fn product_rotates_like_composition(seed in any::<u64>()) {
        let mut rng = random::rng(seed);
        let a = random::unit_quaternion(&mut rng);
        let b = random::unit_quaternion(&mut rng);
        let c = random::unit_quaternion(&mut rng);
        let v = random::box_point(&mut rng, 10.0);
        let lhs = (a * b).rotate_vector(&v).unwrap();
        let rhs = a.rotate_vector(&b.rotate_vector(&v).unwrap()).unwrap();
        prop_assert!((lhs - rhs).norm() < 1e-12);
        prop_assert!(((a * b) * c - a * (b * c)).norm() < 1e-15);
        let m = (a * b).to_matrix().unwrap();
        prop_assert!((m - a.to_matrix().unwrap() * b.to_matrix().unwrap()).norm() < 1e-14);
        prop_assert!((a.rotate_vector(&v).unwrap() - a.to_matrix().unwrap() * v).norm() < 1e-12);
    }

    #[test]
    fn canonical_form_keeps_rotation(seed in any::<u64>()) {
        let mut rng = random::rng(seed);
        let q = random::unit_quaternion(&mut rng);
        let c = q.canonicalize();
        prop_assert_eq!(c, c.canonicalize());
        prop_assert_eq!(c, (-q).canonicalize());
        prop_assert!(c.s >= 0.0);
        prop_assert!((c.to_matrix().unwrap() - q.to_matrix().unwrap()).norm() < 1e-15);
    }

    #[test]
    fn transform_group_laws(seed in any::<u64>()) {
        let mut rng = random::rng(seed);
        let a = random::rigid_transform(&mut rng, 10.0);
        let b = random::rigid_transform(&mut rng, 10.0);
        let x = random::box_point(&mut rng, 5.0);
        prop_assert!((compose(&a, &b).apply(&x) - a.apply(&b.apply(&x))).norm() < 1e-12);
        prop_assert!(compose(&a, &a.inverse()).approx_eq(&RigidTransform::IDENTITY, 1e-12));
        prop_assert!(compose(&a.inverse(), &a).approx_eq(&RigidTransform::IDENTITY, 1e-12));
    }

    #[test]
    fn slerp_halves_the_angle(seed in any::<u64>(), time in 0.0f64..=1.0) {
        let mut rng = random::rng(seed);
        let a = random::unit_quaternion(&mut rng);
        let b = random::unit_quaternion(&mut rng);
        let total = a.angle_to(&b);
        let q = slerp(&a, &b, time).unwrap();
        prop_assert!(q.is_unit());
        prop_assert!((a.angle_to(&q) - time * total).abs() < 1e-9);
        prop_assert!((q.angle_to(&b) - (1.0 - time) * total).abs() < 1e-9);
    }

    #[test]
    fn rmsd_closed_form_matches_atoms(seed in any::<u64>()) {
        let mut rng = random::rng(seed);
        let n = rng.random_range(1..=25);
        let tmpl = random::molecule(&mut rng, n, 2.0);
        let tp = random::rigid_transform(&mut rng, 5.0);
        let tg = random::rigid_transform(&mut rng, 5.0);
        let brute = rmsd_atom(&apply_transform(&tmpl, &tp), &apply_transform(&tmpl, &tg)).unwrap().powi(2);
        let closed = loss_rmsd(&tp, &tg, &tmpl);
        prop_assert!((closed - brute).abs() <= 1e-10 * brute.max(1e-300));
        let swapped = loss_rmsd(&tg, &tp, &tmpl);
        prop_assert!((closed - swapped).abs() <= 1e-10 * closed.max(1e-300));
    }

    #[test]
    fn pm_bounded_by_rmsd(seed in any::<u64>()) {
        let mut rng = random::rng(seed);
        let n = rng.random_range(2..=60);
        let a = random::point_cloud(&mut rng, n, 4.0);
        let b = random::point_cloud(&mut rng, n, 4.0);
        let pm = pm_atom(&a, &b).unwrap();
        let rmsd = rmsd_atom(&a, &b).unwrap();
        prop_assert!(pm * pm <= 2.0 * rmsd * rmsd + 1e-9);
    }

    #[test]
    fn relative_rmsd_ignores_shared_motion(seed in any::<u64>()) {
        let mut rng = random::rng(seed);
        let tmpl = random::molecule(&mut rng, 6, 1.5);
        let ts: Vec<RigidTransform> = (0..4).map(|_| random::rigid_transform(&mut rng, 8.0)).collect();
        let g = random::rigid_transform(&mut rng, 30.0);
        let base = relative_rmsd(&ts[0], &ts[1], &ts[2], &ts[3], &tmpl);
        let moved = relative_rmsd(&g.compose(&ts[0]), &g.compose(&ts[1]), &ts[2], &ts[3], &tmpl);
        prop_assert!((base - moved).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lsa_is_optimal(seed in any::<u64>(), n in 1usize..=6) {
        let c = uniform_matrix(seed, n);
        let (perm, cost) = lsa_solve(&c).unwrap();
        prop_assert_eq!(cost, c.assignment_cost(&perm));
        prop_assert!((cost - brute_cost(&c)).abs() <= 1e-12);
    }

    #[test]
    fn sinkhorn_plan_properties(seed in any::<u64>(), n in 1usize..=9, scale in 0.01f64..1.0) {
        let c = uniform_matrix(seed, n);
        let plan = sinkhorn(&c, scale).unwrap();
        prop_assert!(plan.max_marginal_error() <= 1e-9);
        prop_assert!(plan.as_slice().iter().all(|&p| p >= 0.0));
        let (_, opt) = lsa_solve(&c).unwrap();
        prop_assert!(plan.cost(&c) >= opt - 1e-9);
        // the transposed problem yields exactly the transposed plan
        let pt = sinkhorn(&c.transpose(), scale).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(plan.get(i, j), pt.get(j, i));
            }
        }
    }

    #[test]
    fn rounding_small_reg_plan_recovers_lsa(seed in any::<u64>(), n in 2usize..=7) {
        // well separated costs: integers plus a small jitter
        let mut rng = random::rng(seed);
        let c = CostMatrix::from_fn(n, |_, _| rng.random_range(0..20) as f64 + 0.01 * rng.random::<f64>()).unwrap();
        let (_, opt) = lsa_solve(&c).unwrap();
        let rounded = plan_round(&sinkhorn(&c, 0.05).unwrap());
        prop_assert!(c.assignment_cost(&rounded) <= opt + 0.05 * n as f64 * (n as f64).ln().max(1.0) + 1e-9);
    }

    #[test]
    fn starred_values_are_ordered(seed in any::<u64>()) {
        let mut rng = random::rng(seed);
        let tmpl = Arc::new(random::molecule(&mut rng, 5, 1.5));
        let m = rng.random_range(2..=8);
        let pred = random::assembly(&mut rng, &tmpl, m, 6.0);
        let gt = random::assembly(&mut rng, &tmpl, m, 6.0);
        for kind in [LossKind::ml(), LossKind::Rmsd, LossKind::geom_for(m)] {
            let none = loss_star(&kind, &pred, &gt, AssignmentMode::None, None).unwrap().value;
            let exact = loss_star(&kind, &pred, &gt, AssignmentMode::Exact, None).unwrap().value;
            let soft = loss_star(&kind, &pred, &gt, AssignmentMode::Sinkhorn, None).unwrap().value;
            prop_assert!(exact <= none + 1e-12);
            prop_assert!(soft >= exact - 1e-9);
        }
        let none = metric(MetricKind::RmsdAtom, &pred, &gt).unwrap();
        let exact = metric_star(MetricKind::RmsdAtom, &pred, &gt, AssignmentMode::Exact, CostKind::RigidRmsdSq, None)
            .unwrap()
            .value;
        prop_assert!(exact <= none + 1e-12);
    }

    #[test]
    fn geom_invariant_under_global_motion(seed in any::<u64>()) {
        let mut rng = random::rng(seed);
        let tmpl = Arc::new(random::molecule(&mut rng, 5, 1.5));
        let m = rng.random_range(2..=8);
        let pred = random::assembly(&mut rng, &tmpl, m, 6.0);
        let gt = random::assembly(&mut rng, &tmpl, m, 6.0);
        let g = random::rigid_transform(&mut rng, 40.0);
        let r = rng.random_range(0..m);
        let base = loss_geom(&pred, &gt, r).unwrap();
        prop_assert!((loss_geom(&pred.moved_by(&g), &gt, r).unwrap() - base).abs() < 1e-9);
        prop_assert!((loss_geom(&pred, &gt.moved_by(&g), r).unwrap() - base).abs() < 1e-9);
    }

    #[test]
    fn pm_invariant_under_rigid_motion(seed in any::<u64>()) {
        let mut rng = random::rng(seed);
        let tmpl = Arc::new(random::molecule(&mut rng, 5, 1.5));
        let pred = random::assembly(&mut rng, &tmpl, 6, 6.0);
        let gt = random::assembly(&mut rng, &tmpl, 6, 6.0);
        let g = random::rigid_transform(&mut rng, 40.0);
        for kind in [MetricKind::PmAtom, MetricKind::PmCenter] {
            let a = metric(kind, &pred, &gt).unwrap();
            let b = metric(kind, &pred.moved_by(&g), &gt).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a);
        }
    }

    #[test]
    fn assignment_recovers_shuffle(seed in any::<u64>()) {
        let mut rng = random::rng(seed);
        let tmpl = Arc::new(random::molecule(&mut rng, 5, 1.5));
        let gt = random::assembly(&mut rng, &tmpl, 9, 10.0);
        let order = random::permutation(&mut rng, 9);
        let pred = gt.reindexed(&order).unwrap();
        let report = metric_star(MetricKind::PmAtom, &pred, &gt, AssignmentMode::Exact, CostKind::RigidRmsdSq, None).unwrap();
        prop_assert!(report.value < 1e-9);
        let perm = report.permutation.unwrap();
        for (i, &j) in perm.as_slice().iter().enumerate() {
            prop_assert_eq!(order[j], i);
        }
    }
}

#[test]
fn cost_matrix_independent_of_thread_count() {
    let mut rng = random::rng(77);
    let tmpl = Arc::new(random::molecule(&mut rng, 8, 1.5));
    let pred = random::assembly(&mut rng, &tmpl, 40, 12.0);
    let gt = random::assembly(&mut rng, &tmpl, 40, 12.0);
    let build = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| cost_matrix(&pred, &gt, CostKind::RigidRmsdSq).unwrap())
    };
    assert_eq!(build(1), build(4));
}

#[test]
fn reconstructed_atoms_follow_transforms() {
    let mut rng = random::rng(3);
    let tmpl = Arc::new(random::molecule(&mut rng, 3, 1.0));
    let a = random::assembly(&mut rng, &tmpl, 2, 5.0);
    let atoms = reconstruct_positions(&a);
    assert_eq!(atoms.len(), 6);
    let expected = a.transforms()[1].apply(&tmpl.positions()[2]);
    assert!((atoms[5] - expected).norm() < 1e-15);
}
