use std::sync::Arc;

use admm_eki::admm::{admm_solve, AdmmConfig, AdmmState};
use admm_eki::eki::{eki_inner_loop, eki_iteration, sample_ensemble, EkiConfig, SamplingCovariance};
use admm_eki::problem::{ControlSequence, Dims, FnModel, ProblemSpec, Weights};
use admm_eki::seeding::{stream_rng, Stream};
use admm_eki::weighting::build_weighting;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Nonlinear two-state system with two stage constraints.
fn pendulum_like() -> ProblemSpec {
    let model = FnModel::new(
        |x: &[f64], u: &[f64], n: &mut [f64]| {
            n[0] = x[0] + 0.1 * x[1];
            n[1] = x[1] + 0.1 * (u[0] - x[0].sin());
        },
        |x: &[f64], u: &[f64], g: &mut [f64]| {
            g[0] = x[0] - 1.0;
            g[1] = u[0] * u[0] - 4.0;
        },
    );
    ProblemSpec::new(
        Dims::new(2, 1, 2, 8),
        Arc::new(model),
        Weights::diagonal(&[1.0, 0.1], &[5.0, 1.0], &[0.05]),
        (0..9).flat_map(|_| [1.5, 0.0]).collect(),
    )
    .unwrap()
}

#[test]
fn slack_stays_nonnegative_every_outer_iteration() {
    let spec = pendulum_like();
    let eki = EkiConfig::new(16, 3, SamplingCovariance::StageDiagonal(vec![1.0]));
    for outer in 1..=6 {
        let cfg = AdmmConfig {
            outer_iterations: outer,
            ..AdmmConfig::default()
        };
        let sol = admm_solve(
            &spec,
            &[0.0, 0.0],
            AdmmState::zeros(16, cfg.rho0),
            &spec.zero_controls(),
            &cfg,
            &eki,
            &mut stream_rng(9, Stream::Sampling),
        )
        .unwrap();
        assert_eq!(sol.trace.len(), outer);
        assert!(sol.state.slack.iter().all(|s| *s >= 0.0));
        assert!(sol.state.dual.iter().all(|y| *y >= 0.0));
    }
}

#[test]
fn annealing_matches_closed_form() {
    let spec = pendulum_like();
    let mut cfg = EkiConfig::new(10, 12, SamplingCovariance::StageDiagonal(vec![1.0]));
    cfg.beta0 = 1.7;
    cfg.gamma = 0.35;
    let out = eki_inner_loop(
        &spec,
        &[0.0, 0.0],
        &spec.zero_controls(),
        &[0.0; 16],
        &[0.0; 16],
        1.0,
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    for d in &out.diagnostics {
        assert_eq!(d.beta, 1.7 * (-0.35 * d.iteration as f64).exp());
        if d.iteration > 0 {
            assert!(d.beta < out.diagnostics[d.iteration - 1].beta);
        }
    }
}

fn covariance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let center = |m: &DMatrix<f64>| {
        let mean = m.column_mean();
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - mean[i])
    };
    center(a) * center(b).transpose() / (a.ncols() - 1) as f64
}

fn step_fixture(seed: u64) -> (ProblemSpec, DMatrix<f64>, EkiConfig) {
    let spec = pendulum_like();
    let cfg = EkiConfig::new(12, 1, SamplingCovariance::StageDiagonal(vec![0.8]));
    let f = cfg.sampling.factor(spec.dims()).unwrap();
    let mean = ControlSequence::new((0..8).map(|t| 0.2 * t as f64).collect(), 1).unwrap();
    let particles = sample_ensemble(&mean, &f, 12, 1.0, None, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (spec, particles, cfg)
}

#[test]
fn one_gain_is_shared_by_all_particles() {
    for seed in 0..10 {
        let (spec, particles, cfg) = step_fixture(seed);
        let slack = vec![0.3; 16];
        let dual = vec![0.1; 16];
        let w = build_weighting(&spec, 2.0).unwrap();
        let step = eki_iteration(&spec, &[0.1, 0.0], &particles, &slack, &dual, &w, &cfg).unwrap();
        // Independent gain from dense covariances.
        let p_uc = covariance(&particles, &step.residuals);
        let p_cc = covariance(&step.residuals, &step.residuals);
        let k = (&p_cc + w.to_dense()).lu().solve(&p_uc.transpose()).unwrap().transpose();
        for i in 0..particles.ncols() {
            let expect = particles.column(i) - &k * step.residuals.column(i);
            let got = step.updated.column(i);
            assert!((got - &expect).norm() <= 1e-9 * (1.0 + expect.norm()), "particle {i}");
        }
    }
}

#[test]
fn updates_stay_in_anomaly_span() {
    for seed in 0..10 {
        let (spec, particles, cfg) = step_fixture(seed);
        let w = build_weighting(&spec, 1.0).unwrap();
        let step = eki_iteration(&spec, &[0.0, 0.0], &particles, &[0.0; 16], &[0.0; 16], &w, &cfg).unwrap();
        let anomalies = &step.stats.control_anomalies;
        let svd = anomalies.clone().svd(true, false);
        let u = svd.u.unwrap();
        let tol = 1e-8 * svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
        let basis = u.columns(0, rank);
        let delta = &step.updated - &particles;
        let projected = basis * (basis.transpose() * &delta);
        let off = (&delta - projected).norm();
        assert!(off <= 1e-8 * (1.0 + delta.norm()), "off-span component {off:e}");
    }
}

#[test]
fn residual_covariance_is_psd() {
    for seed in 0..10 {
        let (spec, particles, cfg) = step_fixture(seed);
        let w = build_weighting(&spec, 1.0).unwrap();
        let step = eki_iteration(&spec, &[0.0, 0.0], &particles, &[0.0; 16], &[0.0; 16], &w, &cfg).unwrap();
        let p_cc = step.stats.residual_covariance();
        assert!((&p_cc - p_cc.transpose()).amax() == 0.0);
        let min = p_cc.symmetric_eigenvalues().min();
        assert!(min >= -1e-10, "min eigenvalue {min:e}");
    }
}
