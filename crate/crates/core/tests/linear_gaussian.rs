//! EKI on a linear-quadratic problem against the normal-equation minimizer.

use std::sync::Arc;

use admm_eki::eki::{eki_inner_loop, EkiConfig, SamplingCovariance};
use admm_eki::problem::{ControlSequence, Dims, FnModel, ProblemSpec, Weights};
use admm_eki::seeding::{stream_rng, Stream};
use nalgebra::{DMatrix, DVector};

const H: usize = 6;
const X0: f64 = 1.5;
const R: f64 = 2.0;
const RH: f64 = 5.0;
const Q: f64 = 1.0;
const A: f64 = 0.9;
const B: f64 = 0.7;

fn spec(reference: &[f64]) -> ProblemSpec {
    let model = FnModel::unconstrained(|x: &[f64], u: &[f64], n: &mut [f64]| n[0] = A * x[0] + B * u[0]);
    ProblemSpec::new(
        Dims::new(1, 1, 0, H),
        Arc::new(model),
        Weights::diagonal(&[R], &[RH], &[Q]),
        reference.to_vec(),
    )
    .unwrap()
}

/// Minimizer of ½Σ_t w_t (x_t − z_t)² + ½Σ_t Q u_t² with x = a x0 + M u.
fn normal_equations(reference: &[f64]) -> DVector<f64> {
    let mut m = DMatrix::zeros(H + 1, H);
    let mut free = DVector::zeros(H + 1);
    for t in 0..=H {
        free[t] = A.powi(t as i32) * X0;
        for s in 0..t {
            m[(t, s)] = A.powi((t - s - 1) as i32) * B;
        }
    }
    let w = DMatrix::from_diagonal(&DVector::from_fn(H + 1, |t, _| if t == H { RH } else { R }));
    let z = DVector::from_column_slice(reference);
    let lhs = m.transpose() * &w * &m + DMatrix::identity(H, H) * Q;
    let rhs = m.transpose() * &w * (z - free);
    lhs.lu().solve(&rhs).unwrap()
}

// The ensemble-mean sampling noise sets an absolute error floor of roughly
// 1/sqrt(2Nλ_min) per component, so the reference keeps the minimizer well away
// from zero for the relative tolerance to be meaningful.
#[test]
fn inner_loop_reaches_normal_equation_minimizer() {
    let reference: Vec<f64> = (0..=H).map(|t| 3.0 * (t as f64 * 0.6).sin() + 2.0).collect();
    let spec = spec(&reference);
    let exact = normal_equations(&reference);
    let mut cfg = EkiConfig::new(200, 30, SamplingCovariance::StageDiagonal(vec![1.0]));
    cfg.gamma = 0.05;
    let mut hits = 0;
    let seeds = 50;
    for seed in 0..seeds {
        cfg.seed = seed;
        let mut rng = stream_rng(seed, Stream::Sampling);
        let out = eki_inner_loop(&spec, &[X0], &ControlSequence::zeros(H, 1), &[], &[], 1.0, &cfg, &mut rng).unwrap();
        let got = DVector::from_column_slice(out.mean.as_slice());
        let rel = (&got - &exact).norm() / exact.norm();
        if rel <= 0.05 {
            hits += 1;
        }
    }
    assert!(hits * 10 >= seeds * 9, "{hits}/{seeds} seeds within 5%");
}
