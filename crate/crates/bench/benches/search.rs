use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hcm_bench::problem;
use hcm_core::search::SearchContext;
use hcm_core::{discretize, Mechanism, SearchOptions};

fn search(c: &mut Criterion) {
    let p = problem(30, 3);
    let mut group = c.benchmark_group("search");
    group.sample_size(10);
    for n in [8, 16] {
        let grid = discretize(n).unwrap();
        let ctx = SearchContext::new(&p.scene.graph, Some(&p.assignment), &p.cfg, &grid).unwrap();
        for mech in [Mechanism::Cm, Mechanism::Mcm, Mechanism::Hcm] {
            for prune in [false, true] {
                let opts = SearchOptions { prune, ..SearchOptions::default() };
                let id = format!("{mech}{}", if prune { "/pruned" } else { "" });
                group.bench_with_input(BenchmarkId::new(id, n), &opts, |b, o| {
                    b.iter(|| ctx.search(black_box(mech), o).unwrap())
                });
            }
        }
    }
    group.finish();
}

criterion_group!(benches, search);
criterion_main!(benches);
