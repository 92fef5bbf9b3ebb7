use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tailrisk_core::ivqr::{self, SmoothingRule};
use tailrisk_core::mc::{simulate_stream, DgpSpec};
use tailrisk_core::qreg::fit_quantile;
use tailrisk_core::risk::{default_taus, density_from_quantiles, DensityOptions};
use tailrisk_core::stats::norm_ppf;
use tailrisk_core::{EstimationDataset, IvqrOptions};

fn dataset(n: usize) -> EstimationDataset {
    simulate_stream(&DgpSpec { n, ..Default::default() }, 0).unwrap().dataset
}

fn quantile_regression(c: &mut Criterion) {
    let mut g = c.benchmark_group("qr_fit");
    for n in [200, 1000, 2000] {
        let ds = dataset(n);
        let x = ds.regressors();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| fit_quantile(black_box(&x), black_box(&ds.y), 0.8).unwrap())
        });
    }
    g.finish();
}

fn wald(c: &mut Criterion) {
    let ds = dataset(2000);
    let opts = IvqrOptions::default();
    let d_hat = ivqr::first_stage_fit(&ds).unwrap().fitted;
    c.bench_function("wald_objective/2000", |b| {
        b.iter(|| ivqr::wald_objective(black_box(1.17), &ds, 0.8, &d_hat, &opts).unwrap())
    });
}

fn ivqr_fits(c: &mut Criterion) {
    let ds = dataset(2000);
    let opts = IvqrOptions::default();
    let mut g = c.benchmark_group("ivqr/2000");
    g.sample_size(10);
    g.bench_function("grid", |b| b.iter(|| ivqr::fit_ivqr_grid_default(black_box(&ds), 0.8, &opts).unwrap()));
    g.bench_function("smoothed", |b| {
        b.iter(|| ivqr::fit_ivqr_smoothed(black_box(&ds), 0.8, SmoothingRule::PlugIn, None, &opts).unwrap())
    });
    g.finish();
}

fn density(c: &mut Criterion) {
    let taus = default_taus();
    let q: Vec<f64> = taus.iter().map(|t| norm_ppf(*t)).collect();
    let opts = DensityOptions::default();
    c.bench_function("density_from_quantiles", |b| {
        b.iter(|| density_from_quantiles(black_box(&taus), black_box(&q), &opts).unwrap())
    });
}

criterion_group!(benches, quantile_regression, wald, ivqr_fits, density);
criterion_main!(benches);
