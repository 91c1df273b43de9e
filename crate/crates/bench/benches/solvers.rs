use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wass_splines::assignment::solve_assignment;
use wass_splines::*;

fn chain_problem(nx: usize, n_steps: usize) -> (ChainKernel, Vec<Constraint>) {
    let g = Grid::new_1d(nx, 0.0, 1.0).unwrap();
    let t = TimeGrid::new(n_steps, 1.0).unwrap();
    let k = build_chain_kernel(&g, &t, 1e-3, CostKind::Acceleration).unwrap();
    let means = [0.2, 0.45, 0.6, 0.8];
    let steps = [0, n_steps / 3, 2 * n_steps / 3, n_steps - 1];
    let cs = steps
        .iter()
        .zip(means)
        .map(|(&s, m)| Constraint::new(s, GaussianMixture::single(vec![m], 4e-4).unwrap().rasterize(&g).unwrap()))
        .collect();
    (k, cs)
}

fn sinkhorn(c: &mut Criterion) {
    let mut group = c.benchmark_group("sinkhorn_solve");
    group.sample_size(10);
    for nx in [50, 100] {
        let (k, cs) = chain_problem(nx, 10);
        let opts = SolveOptions { tol: 0.0, max_iters: 20, log_domain: false, check_every: 20 };
        group.bench_with_input(BenchmarkId::new("20 sweeps", nx), &nx, |b, _| {
            b.iter(|| sinkhorn_solve(black_box(&k), &cs, &opts).unwrap())
        });
    }
    group.finish();
}

fn splines(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let times: Vec<f64> = (0..64).map(f64::from).collect();
    let points: Vec<Vec<f64>> = (0..64).map(|_| vec![rng.gen(), rng.gen()]).collect();
    c.bench_function("spline_cost 64 knots", |b| b.iter(|| spline_cost(black_box(&times), &points).unwrap()));
}

fn hungarian(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_assignment");
    for n in [100, 200] {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let cost: Vec<f64> = (0..n * n).map(|_| rng.gen()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| solve_assignment(black_box(&cost), n, n).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sinkhorn, splines, hungarian);
criterion_main!(benches);
