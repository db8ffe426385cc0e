use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use sigma2_core::grid::{GridField, GridSpec};
use sigma2_core::jacobi::{certified_min_gap, JacobiQuantity};
use sigma2_core::legendre::{vertical_residuals, VerticalPoint};
use sigma2_core::solver::{solve_dirichlet, Rhs, SolveConfig};
use sigma2_core::spectrum::{extreme_configuration, sigma2_matrix};
use sigma2_core::weak::{very_weak_residual, TestFunction};
use sigma2_core::zoo::zoo_eval;
use sigma2_core::ClosedFormSolution;

fn pointwise(c: &mut Criterion) {
    let w = ClosedFormSolution::Warren { n: 3 };
    let h = zoo_eval(&w, &[0.3, -0.2, 0.5], 2).unwrap().hessian.unwrap();
    c.bench_function("sigma2_matrix", |b| b.iter(|| sigma2_matrix(black_box(&h), 1e-10)));
    c.bench_function("zoo_eval_warren_order4", |b| b.iter(|| zoo_eval(&w, black_box(&[0.3, -0.2, 0.5]), 4).unwrap()));

    let lam = extreme_configuration(4, 3.0).unwrap();
    let q = JacobiQuantity::almost_jacobi();
    c.bench_function("certified_min_gap_n4", |b| b.iter(|| certified_min_gap(black_box(&lam), &q).unwrap()));
    let v = VerticalPoint::from_lambda(&lam, 4.0).unwrap();
    c.bench_function("vertical_residuals_n4", |b| b.iter(|| vertical_residuals(black_box(&v)).unwrap()));
}

fn grids(c: &mut Criterion) {
    let spec = GridSpec::cube(2, 0.0, 1.0, 1.0 / 32.0).unwrap();
    let boundary = GridField::from_fn(spec, |x| 0.5 * (3f64.sqrt() * x[0] * x[0] + x[1] * x[1] / 3f64.sqrt()));
    let mut group = c.benchmark_group("grids");
    group.sample_size(10);
    group.bench_function("solve_dirichlet_2d_h32", |b| {
        b.iter(|| solve_dirichlet(black_box(&boundary), &Rhs::Constant(1.0), &SolveConfig::default()).unwrap())
    });
    let u = GridField::from_fn(GridSpec::cube(2, -1.0, 1.0, 1.0 / 64.0).unwrap(), |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
    let phi = TestFunction::new(vec![0.0, 0.0], vec![0.5, 0.5], 1.0).unwrap();
    group.bench_function("very_weak_residual_2d_h64", |b| b.iter(|| very_weak_residual(black_box(&u), &phi).unwrap()));
    group.finish();
}

criterion_group!(benches, pointwise, grids);
criterion_main!(benches);
