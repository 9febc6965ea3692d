use std::hint::black_box;

use admm_eki::benchmarks::racing::{build_race_environment, BicycleParams, RacingCost, TrackParams};
use admm_eki::eki::{compute_residuals, eki_iteration, sample_ensemble, EkiConfig, SamplingCovariance};
use admm_eki::parallel::Execution;
use admm_eki::weighting::build_weighting;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn modes() -> Vec<(&'static str, Execution)> {
    let mut v = vec![("sequential", Execution::Sequential)];
    if cfg!(feature = "parallel") {
        v.push(("parallel", Execution::Parallel));
    }
    v
}

fn racing_rollouts(c: &mut Criterion) {
    let env = build_race_environment(0, &TrackParams::default(), &BicycleParams::default(), 20).unwrap();
    let spec = env.problem_spec(&RacingCost::default()).unwrap();
    let x0 = env.initial_state(6.0);
    let hq = spec.dims().stacked_constraints_len();
    let (slack, dual) = (vec![0.0; hq], vec![0.0; hq]);
    let weighting = build_weighting(&spec, 1.0).unwrap();

    let mut group = c.benchmark_group("residuals");
    for n in [64usize, 256] {
        let cfg = EkiConfig::new(n, 1, SamplingCovariance::StageDiagonal(vec![0.1, 2.0]));
        let factor = cfg.sampling.factor(spec.dims()).unwrap();
        let particles =
            sample_ensemble(&spec.zero_controls(), &factor, n, 1.0, spec.bounds(), &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap();
        for (name, mode) in modes() {
            group.bench_with_input(BenchmarkId::new(name, n), &particles, |b, p| {
                b.iter(|| compute_residuals(&spec, black_box(&x0), p, &slack, &dual, mode).unwrap())
            });
        }
    }
    group.finish();

    let mut group = c.benchmark_group("eki_iteration");
    for n in [64usize, 256] {
        let factor = SamplingCovariance::StageDiagonal(vec![0.1, 2.0]).factor(spec.dims()).unwrap();
        let particles =
            sample_ensemble(&spec.zero_controls(), &factor, n, 1.0, spec.bounds(), &mut ChaCha8Rng::seed_from_u64(0))
                .unwrap();
        for (name, mode) in modes() {
            let mut cfg = EkiConfig::new(n, 1, SamplingCovariance::StageDiagonal(vec![0.1, 2.0]));
            cfg.execution = mode;
            group.bench_with_input(BenchmarkId::new(name, n), &particles, |b, p| {
                b.iter(|| eki_iteration(&spec, black_box(&x0), p, &slack, &dual, &weighting, &cfg).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, racing_rollouts);
criterion_main!(benches);
