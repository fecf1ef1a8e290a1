use std::sync::Arc;

use rigidpack::fitter::{fit_assembly, flow_trajectory, FitConfig};
use rigidpack::losses::LossKind;
use rigidpack::random::{self, cluster_fixture};
use rigidpack::AssignmentMode;

#[test]
fn fits_are_bit_reproducible() {
    let fx = cluster_fixture(4);
    let mut cfg = FitConfig::new(LossKind::ml(), AssignmentMode::Sinkhorn);
    cfg.max_iters = 60;
    let a = fit_assembly(&fx.initial, &fx.target, &cfg).unwrap();
    let b = fit_assembly(&fx.initial, &fx.target, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn accepted_steps_never_increase_the_loss() {
    for kind in [LossKind::ml(), LossKind::Rmsd, LossKind::geom_for(17)] {
        let fx = cluster_fixture(5);
        let mut cfg = FitConfig::new(kind, AssignmentMode::Exact);
        cfg.max_iters = 300;
        let r = fit_assembly(&fx.initial, &fx.target, &cfg).unwrap();
        assert!(r.loss_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{kind}");
        assert_eq!(r.loss_trace.len(), r.iterations + 1);
        assert_eq!(*r.loss_trace.last().unwrap(), r.final_loss);
    }
}

#[test]
fn shuffled_target_is_recovered() {
    let fx = cluster_fixture(6);
    let order = random::permutation(&mut random::rng(6), 17);
    let target = fx.target.reindexed(&order).unwrap();
    let cfg = FitConfig::new(LossKind::Rmsd, AssignmentMode::Exact);
    let r = fit_assembly(&fx.initial, &target, &cfg).unwrap();
    assert!(r.converged);
    assert!(r.final_loss < 1e-6, "{}", r.final_loss);
    let pairing = r.assignment.unwrap();
    // target slot i holds initial molecule order[i]
    for (i, &j) in pairing.as_slice().iter().enumerate() {
        assert_eq!(j, order[i]);
    }
}

#[test]
fn trajectory_of_a_resting_assembly_is_constant() {
    let mut rng = random::rng(9);
    let tmpl = Arc::new(random::molecule(&mut rng, 5, 1.0));
    let a = random::assembly(&mut rng, &tmpl, 4, 5.0);
    let frames = flow_trajectory(&a, &a, 50).unwrap();
    assert_eq!(frames.len(), 50);
    assert!(frames.iter().all(|f| f == &a));
}
