use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use snrmom::generators::gen_gaussian_design;
use snrmom::matrix_stats::sym_factor;
use snrmom::rng::from_seed;
use snrmom::{estimate_fixed, estimate_random, spectral_moments, Matrix, SymMatrix};

fn data(n: usize, p: usize, q: usize) -> (Matrix, Matrix) {
    let mut rng = from_seed(7);
    let x = gen_gaussian_design(n, p, None, &mut rng).unwrap();
    let y = gen_gaussian_design(n, q, None, &mut rng).unwrap();
    (x, y)
}

fn estimators(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimate");
    for &(n, p) in &[(400, 100), (1000, 500)] {
        let (x, y) = data(n, p, 20);
        group.bench_with_input(BenchmarkId::new("fixed", format!("{n}x{p}")), &(), |b, _| {
            b.iter(|| estimate_fixed(black_box(&x), black_box(&y)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("random", format!("{n}x{p}")), &(), |b, _| {
            b.iter(|| estimate_random(black_box(&x), black_box(&y)).unwrap())
        });
    }
    group.finish();
}

fn linear_algebra(c: &mut Criterion) {
    let (x, _) = data(1000, 500, 1);
    c.bench_function("spectral_moments 1000x500", |b| b.iter(|| spectral_moments(black_box(&x))));
    let s = SymMatrix::from_fn(500, |i, j| 0.5f64.powi(i.abs_diff(j) as i32));
    c.bench_function("sym_factor ar1 500", |b| b.iter(|| sym_factor(black_box(&s)).unwrap()));
}

criterion_group!(benches, estimators, linear_algebra);
criterion_main!(benches);
