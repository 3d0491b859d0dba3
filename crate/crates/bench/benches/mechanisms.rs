use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hcm_bench::{inlier_set, problem};
use hcm_core::eval::HcmEvaluator;
use hcm_core::mechanism::{likelihood_constant, HopcroftKarp};
use hcm_core::search::SearchContext;
use hcm_core::sweep::{sweep_cm, sweep_hcm, sweep_mcm};
use hcm_core::{assign_marginals, discretize, AssignmentConfig};

fn post_inlier(c: &mut Criterion) {
    let mut group = c.benchmark_group("post_inlier");
    let cx = likelihood_constant(0.1, 0.03);
    for n in [128, 256, 512, 1024] {
        let set = inlier_set(256, n, n as u64);
        let mut hk = HopcroftKarp::new();
        group.bench_with_input(BenchmarkId::new("mcm", n), &set, |b, s| {
            b.iter(|| hk.solve(s.features, s.features, black_box(&s.pairs)))
        });
        let mut ev = HcmEvaluator::new(256, 256);
        group.bench_with_input(BenchmarkId::new("hcm", n), &set, |b, s| {
            b.iter(|| ev.score(black_box(&s.triples), &s.inv_px, &s.inv_py, cx, cx))
        });
    }
    group.finish();
}

fn sweeps(c: &mut Criterion) {
    let p = problem(60, 1);
    let grid = discretize(32).unwrap();
    let ctx = SearchContext::new(&p.scene.graph, Some(&p.assignment), &p.cfg, &grid).unwrap();
    // The cell nearest the true pose has the densest events.
    let params = hcm_core::geometry::pose_to_params(&p.scene.pose).params;
    let cell = grid.cell_index(grid.nearest(&params.v1), grid.nearest(&params.v2));
    let mut events = Vec::new();
    ctx.cell_events(cell, &mut events);
    let a = &p.assignment;
    let mut group = c.benchmark_group("sweep");
    group.bench_function("cm", |b| b.iter(|| sweep_cm(black_box(&events))));
    group.bench_function("mcm", |b| b.iter(|| sweep_mcm(black_box(&events))));
    group.bench_function("hcm", |b| {
        b.iter(|| sweep_hcm(black_box(&events), &a.left_totals, &a.right_totals, &p.cfg))
    });
    group.finish();
}

fn marginals(c: &mut Criterion) {
    let p = problem(200, 2);
    let cfg = AssignmentConfig::new(0.1, 0.1).unwrap();
    c.bench_function("assign_marginals/200 points", |b| {
        b.iter(|| assign_marginals(black_box(&p.scene.graph), &cfg).unwrap())
    });
}

criterion_group!(benches, post_inlier, sweeps, marginals);
criterion_main!(benches);
