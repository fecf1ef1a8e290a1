//! Quick invariant checks across all modules, run by `rigidpack selftest`.

use std::sync::Arc;

use crate::assignment::{lsa_solve, sinkhorn, CostMatrix};
use crate::error::Result;
use crate::fitter::flow_trajectory;
use crate::losses::{loss_geom, loss_rmsd, loss_rmsd_parts, loss_star, LossKind};
use crate::metrics::{metric, metric_star, reconstruct_positions, rmsd_atom, AssignmentMode, CostKind, MetricKind};
use crate::random;
use crate::rigid_body::apply_transform;
use crate::se3::{Quaternion, RigidTransform};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelftestReport {
    pub checks: Vec<CheckOutcome>,
}

impl SelftestReport {
    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.passed).count()
    }

    pub fn failed(&self) -> usize {
        self.checks.len() - self.passed()
    }

    pub fn all_passed(&self) -> bool {
        self.failed() == 0
    }
}

type Check = fn(u64) -> Result<(bool, String)>;

fn quaternion_algebra(seed: u64) -> Result<(bool, String)> {
    let mut rng = random::rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a = random::unit_quaternion(&mut rng);
        let b = random::unit_quaternion(&mut rng);
        let v = random::box_point(&mut rng, 5.0);
        let lhs = (a * b).rotate_vector(&v)?;
        let rhs = a.rotate_vector(&b.rotate_vector(&v)?)?;
        worst = worst.max((lhs - rhs).norm());
        worst = worst.max(((a * a.inverse()?) - Quaternion::IDENTITY).norm());
    }
    Ok((worst < 1e-12, format!("max deviation {worst:.3e}")))
}

fn transform_inverse(seed: u64) -> Result<(bool, String)> {
    let mut rng = random::rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let t = random::rigid_transform(&mut rng, 10.0);
        let x = random::box_point(&mut rng, 5.0);
        worst = worst.max((t.inverse().apply(&t.apply(&x)) - x).norm());
    }
    Ok((worst < 1e-12, format!("max deviation {worst:.3e}")))
}

fn rigid_rmsd_oracle(seed: u64) -> Result<(bool, String)> {
    let mut rng = random::rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let tmpl = random::molecule(&mut rng, 10, 2.0);
        let t = random::rigid_transform(&mut rng, 5.0);
        let brute = rmsd_atom(&apply_transform(&tmpl, &t), tmpl.positions())?;
        let closed = tmpl.rmsd_sq(&t).sqrt();
        worst = worst.max((brute - closed).abs() / brute.max(1e-300));
        let (a, b) = loss_rmsd_parts(&t, &RigidTransform::IDENTITY, &tmpl);
        worst = worst.max((a + b - loss_rmsd(&t, &RigidTransform::IDENTITY, &tmpl)).abs());
    }
    Ok((worst < 1e-10, format!("max relative deviation {worst:.3e}")))
}

fn lsa_exhaustive(seed: u64) -> Result<(bool, String)> {
    let mut rng = random::rng(seed);
    let mut ok = true;
    for n in 2..=6 {
        for _ in 0..10 {
            let c = CostMatrix::from_fn(n, |_, _| rand::Rng::random::<f64>(&mut rng))?;
            let (_, cost) = lsa_solve(&c)?;
            let mut order: Vec<usize> = (0..n).collect();
            let mut best = f64::INFINITY;
            permute(&mut order, 0, &mut |p| {
                best = best.min(p.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum());
            });
            ok &= cost == best;
        }
    }
    Ok((ok, "50 matrices, sizes 2-6".to_string()))
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

fn sinkhorn_marginals(seed: u64) -> Result<(bool, String)> {
    let mut rng = random::rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let c = CostMatrix::from_fn(8, |_, _| rand::Rng::random::<f64>(&mut rng))?;
        let plan = sinkhorn(&c, 0.05)?;
        worst = worst.max(plan.max_marginal_error());
        let (_, opt) = lsa_solve(&c)?;
        worst = worst.max((opt - plan.cost(&c)).max(0.0));
    }
    Ok((worst < 1e-6, format!("max marginal error / bound violation {worst:.3e}")))
}

fn metric_invariance(seed: u64) -> Result<(bool, String)> {
    let mut rng = random::rng(seed);
    let tmpl = Arc::new(random::molecule(&mut rng, 5, 1.5));
    let pred = random::assembly(&mut rng, &tmpl, 6, 8.0);
    let gt = random::assembly(&mut rng, &tmpl, 6, 8.0);
    let g = random::rigid_transform(&mut rng, 20.0);
    let base = metric(MetricKind::PmAtom, &pred, &gt)?;
    let moved = metric(MetricKind::PmAtom, &pred.moved_by(&g), &gt)?;
    let geom = loss_geom(&pred, &gt, 5)?;
    let geom_moved = loss_geom(&pred.moved_by(&g), &gt, 5)?;
    let dev = ((base - moved).abs() / base).max((geom - geom_moved).abs());
    Ok((dev < 1e-9, format!("max deviation {dev:.3e}")))
}

fn starred_permutation(seed: u64) -> Result<(bool, String)> {
    let mut rng = random::rng(seed);
    let tmpl = Arc::new(random::molecule(&mut rng, 5, 1.5));
    let pred = random::assembly(&mut rng, &tmpl, 9, 8.0);
    let gt = random::assembly(&mut rng, &tmpl, 9, 8.0);
    let shuffled = pred.reindexed(&random::permutation(&mut rng, 9))?;
    let a = loss_star(&LossKind::Rmsd, &pred, &gt, AssignmentMode::Exact, None)?.value;
    let b = loss_star(&LossKind::Rmsd, &shuffled, &gt, AssignmentMode::Exact, None)?.value;
    let ma = metric_star(MetricKind::RmsdAtom, &pred, &gt, AssignmentMode::Exact, CostKind::RigidRmsdSq, None)?.value;
    let mb = metric_star(MetricKind::RmsdAtom, &shuffled, &gt, AssignmentMode::Exact, CostKind::RigidRmsdSq, None)?.value;
    let dev = (a - b).abs().max((ma - mb).abs());
    Ok((dev <= 1e-12, format!("max deviation {dev:.3e}")))
}

fn trajectory_endpoints(seed: u64) -> Result<(bool, String)> {
    let mut rng = random::rng(seed);
    let tmpl = Arc::new(random::molecule(&mut rng, 4, 1.0));
    let a = random::assembly(&mut rng, &tmpl, 4, 6.0);
    let b = random::assembly(&mut rng, &tmpl, 4, 6.0);
    let traj = flow_trajectory(&a, &b, 50)?;
    let start = rmsd_atom(&reconstruct_positions(&traj[0]), &reconstruct_positions(&a))?;
    let end = rmsd_atom(&reconstruct_positions(&traj[49]), &reconstruct_positions(&b))?;
    Ok((start.max(end) < 1e-9, format!("endpoint deviation {:.3e}", start.max(end))))
}

const CHECKS: &[(&str, Check)] = &[
    ("quaternion algebra", quaternion_algebra),
    ("transform inverse", transform_inverse),
    ("rigid RMSD closed form", rigid_rmsd_oracle),
    ("exact assignment", lsa_exhaustive),
    ("sinkhorn marginals", sinkhorn_marginals),
    ("rigid-motion invariance", metric_invariance),
    ("starred permutation invariance", starred_permutation),
    ("trajectory endpoints", trajectory_endpoints),
];

pub fn run(seed: u64) -> SelftestReport {
    let checks = CHECKS
        .iter()
        .map(|(name, check)| match check(seed) {
            Ok((passed, detail)) => CheckOutcome { name, passed, detail },
            Err(e) => CheckOutcome {
                name,
                passed: false,
                detail: e.to_string(),
            },
        })
        .collect();
    SelftestReport { checks }
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        let report = super::run(0);
        for c in &report.checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
