use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use svrg_bench::{model, two_epochs};
use svrg_core::{optimize, LossKind, Method};

fn epochs(c: &mut Criterion) {
    let n = 2000;
    let m = model(n, 50, LossKind::Logistic);
    let w0 = vec![0.0; m.dim()];
    let mut group = c.benchmark_group("two_epochs");
    group.sample_size(10);
    for method in Method::ALL {
        let cfg = two_epochs(method, n);
        group.bench_with_input(BenchmarkId::from_parameter(method.name()), &cfg, |b, cfg| {
            b.iter(|| optimize(&m, cfg, black_box(&w0), None).unwrap())
        });
    }
    group.finish();
}

fn oracles(c: &mut Criterion) {
    for kind in [LossKind::Logistic, LossKind::SquaredHinge] {
        let m = model(5000, 100, kind);
        let w = vec![0.01; m.dim()];
        let v = vec![1.0; m.dim()];
        c.bench_function(&format!("{}/grad_full", kind.name()), |b| b.iter(|| m.grad_full(black_box(&w)).unwrap()));
        c.bench_function(&format!("{}/hess_vec_full", kind.name()), |b| {
            b.iter(|| m.hess_vec_full(black_box(&w), &v).unwrap())
        });
    }
}

criterion_group!(benches, epochs, oracles);
criterion_main!(benches);
