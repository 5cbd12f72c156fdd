use std::hint::black_box;

use bdd_core::covariance::build_surface;
use bdd_core::inference::uniform_quantile;
use bdd_core::locpoly::fit_point;
use bdd_core::oracle::fixed_h_bias;
use bdd_core::simulation::{default_grid, draw_sample, run_monte_carlo};
use bdd_core::{estimate_grid, DgpSpec, Euclidean, FitConfig, Kernel, McConfig, PointFit};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const H: f64 = 28.0;

fn grid_fits(n: usize, m: usize) -> Vec<PointFit> {
    let dgp = DgpSpec::calibrated();
    let sample = draw_sample(&dgp, n, 1).unwrap();
    let rule = dgp.boundary().unwrap().rule;
    default_grid(m, 40.0)
        .unwrap()
        .points
        .into_iter()
        .map(|b| fit_point(&sample, b, &rule, &Euclidean, Kernel::Triangular, H, 1).unwrap())
        .collect()
}

fn point_fit(c: &mut Criterion) {
    let dgp = DgpSpec::calibrated();
    let rule = dgp.boundary().unwrap().rule;
    let mut group = c.benchmark_group("fit_point");
    for n in [1000, 5000, 20000] {
        let sample = draw_sample(&dgp, n, 1).unwrap();
        let b = default_grid(21, 40.0).unwrap().points[5];
        group.bench_with_input(BenchmarkId::from_parameter(n), &sample, |bench, s| {
            bench.iter(|| fit_point(s, black_box(b), &rule, &Euclidean, Kernel::Triangular, H, 1).unwrap())
        });
    }
    group.finish();
}

fn surface(c: &mut Criterion) {
    let mut group = c.benchmark_group("build_surface");
    for m in [5, 21] {
        let fits = grid_fits(5000, m);
        group.bench_with_input(BenchmarkId::from_parameter(m), &fits, |bench, fits| {
            bench.iter_batched_ref(|| fits.clone(), |f| build_surface(f, 1e-10).unwrap(), criterion::BatchSize::LargeInput)
        });
    }
    group.finish();
}

fn band_quantile(c: &mut Criterion) {
    let mut fits = grid_fits(5000, 21);
    let corr = build_surface(&mut fits, 1e-10).unwrap().corr;
    c.bench_function("uniform_quantile/21x10000", |bench| {
        bench.iter(|| uniform_quantile(&corr, 0.05, 10_000, black_box(7)).unwrap())
    });
}

fn bias(c: &mut Criterion) {
    let mut group = c.benchmark_group("fixed_h_bias");
    for kernel in [Kernel::Uniform, Kernel::Triangular] {
        group.bench_function(kernel.to_string(), |bench| {
            bench.iter(|| fixed_h_bias(kernel, 1, 0.4, black_box(0.22)).unwrap())
        });
    }
    group.finish();
}

fn end_to_end(c: &mut Criterion) {
    let dgp = DgpSpec::calibrated();
    let sample = draw_sample(&dgp, 5000, 3).unwrap();
    let boundary = dgp.boundary().unwrap();
    let grid = default_grid(21, 40.0).unwrap();
    let cfg = FitConfig::default();
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    group.bench_function("estimate_grid/n5000_m21", |bench| {
        bench.iter(|| estimate_grid(&sample, &boundary, &grid, &Euclidean, &cfg, 1).unwrap())
    });
    let mc = McConfig {
        dgp,
        n: 2000,
        reps: 4,
        grid: default_grid(7, 40.0).unwrap().points,
        fit: FitConfig {
            band_draws: 2000,
            ..FitConfig::default()
        },
        seed: 2,
    };
    group.bench_function("run_monte_carlo/4reps", |bench| bench.iter(|| run_monte_carlo(&mc).unwrap()));
    group.finish();
}

criterion_group!(benches, point_fit, surface, band_quantile, bias, end_to_end);
criterion_main!(benches);
