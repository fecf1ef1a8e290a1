use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rigidpack::random::{self, cluster_fixture};
use rigidpack::{
    cost_matrix, default_reg, loss_gradient, loss_rmsd, lsa_solve, metric_star, reconstruct_positions, rmsd_atom, sinkhorn,
    AssignmentMode, CostKind, CostMatrix, LossKind, MetricKind,
};

fn uniform_costs(n: usize, seed: u64) -> CostMatrix {
    let mut rng = random::rng(seed);
    let flat = random::point_cloud(&mut rng, n * n, 1.0);
    CostMatrix::from_fn(n, |i, j| flat[i * n + j].norm()).unwrap()
}

fn assignment(c: &mut Criterion) {
    let mut group = c.benchmark_group("assignment");
    for n in [17, 64, 256] {
        let cost = uniform_costs(n, n as u64);
        group.bench_with_input(BenchmarkId::new("lsa_solve", n), &cost, |b, cost| b.iter(|| lsa_solve(black_box(cost)).unwrap()));
        let reg = default_reg(&cost);
        group.bench_with_input(BenchmarkId::new("sinkhorn", n), &cost, |b, cost| {
            b.iter(|| sinkhorn(black_box(cost), reg).unwrap())
        });
    }
    group.finish();
}

fn pair_costs(c: &mut Criterion) {
    let fx = cluster_fixture(0);
    let mut group = c.benchmark_group("cost_matrix");
    for kind in [CostKind::RigidRmsdSq, CostKind::CenterDistSq] {
        group.bench_function(format!("{kind:?}"), |b| {
            b.iter(|| cost_matrix(black_box(&fx.initial), black_box(&fx.target), kind).unwrap())
        });
    }
    group.finish();
}

fn rmsd(c: &mut Criterion) {
    let fx = cluster_fixture(1);
    let (p, g) = (&fx.initial.transforms()[0], &fx.target.transforms()[0]);
    let template = fx.target.template();
    c.bench_function("loss_rmsd closed form", |b| b.iter(|| loss_rmsd(black_box(p), black_box(g), template)));
    let (x, y) = (reconstruct_positions(&fx.initial), reconstruct_positions(&fx.target));
    c.bench_function("rmsd_atom 17 molecules", |b| b.iter(|| rmsd_atom(black_box(&x), black_box(&y)).unwrap()));
    c.bench_function("metric_star pm_atom exact", |b| {
        b.iter(|| metric_star(MetricKind::PmAtom, &fx.initial, &fx.target, AssignmentMode::Exact, CostKind::RigidRmsdSq, None).unwrap())
    });
}

fn gradients(c: &mut Criterion) {
    let fx = cluster_fixture(2);
    let mut group = c.benchmark_group("loss_gradient");
    for (name, kind) in [("ml", LossKind::ml()), ("rmsd", LossKind::Rmsd), ("geom", LossKind::geom_for(17))] {
        for (mode_name, mode) in [("none", AssignmentMode::None), ("exact", AssignmentMode::Exact), ("sinkhorn", AssignmentMode::Sinkhorn)] {
            group.bench_function(format!("{name}/{mode_name}"), |b| {
                b.iter(|| loss_gradient(&kind, black_box(&fx.initial), &fx.target, mode, None).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, assignment, pair_costs, rmsd, gradients);
criterion_main!(benches);
