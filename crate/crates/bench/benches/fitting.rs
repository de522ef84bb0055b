use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;
use pgmeta::optimizer::{default_lambda_grid, maximize, select_lambda_1d, NewtonConfig, PenalizedModel, SearchConfig};
use pgmeta_bench::{intercept_model, location_model, mixture_data, start};
use std::hint::black_box;

fn score_and_information(c: &mut Criterion) {
    let mut group = c.benchmark_group("score_and_information");
    for n in [100, 400, 1600] {
        let model = intercept_model(&mixture_data(n, 1), 1.0);
        let eta = start(model.dim());
        group.bench_with_input(BenchmarkId::new("intercept", n), &eta, |b, eta| b.iter(|| model.evaluate(black_box(eta)).unwrap()));
    }
    let model = location_model(160, 2, 1.0);
    let eta = start(model.dim());
    group.bench_function("location/160-clusters", |b| b.iter(|| model.evaluate(black_box(&eta)).unwrap()));
    group.finish();
}

fn newton(c: &mut Criterion) {
    let mut group = c.benchmark_group("maximize");
    for n in [100, 400] {
        let model = intercept_model(&mixture_data(n, 3), 1.0);
        let init = DVector::zeros(model.dim());
        group.bench_with_input(BenchmarkId::new("intercept", n), &init, |b, init| {
            b.iter(|| maximize(&model, black_box(init), &NewtonConfig::default()).unwrap())
        });
    }
    group.finish();
}

fn lambda_search(c: &mut Criterion) {
    let mut group = c.benchmark_group("select_lambda");
    group.sample_size(10);
    let model = intercept_model(&mixture_data(400, 4), 0.0);
    let init = DVector::zeros(model.dim());
    let grid = default_lambda_grid();
    for warm_start in [true, false] {
        let cfg = SearchConfig { warm_start, ..SearchConfig::default() };
        let name = if warm_start { "warm" } else { "cold" };
        group.bench_function(name, |b| b.iter(|| select_lambda_1d(&model, black_box(&init), &grid, &cfg).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, score_and_information, newton, lambda_search);
criterion_main!(benches);
