//! Constrained two-dimensional Rastrigin inversion.
//!
//! Forward map `h(x) = x₁² + x₂² − 10cos(πx₁) − 10cos(πx₂)`, data `y = h(0, 0)`,
//! misfit `f(x) = (y − h(x))²`, and four forbidden disks folded into the single
//! constraint `g(x) = maxᵢ max(rᵢ² − ‖x − cᵢ‖², 0) ≤ 0`. The disks block the
//! global minimizer and three of the eight local ones, leaving `(−2, 0)`.
//!
//! The static problem is run through the full MPC stack: the point `x` is the
//! only control of a horizon-1 problem, the single state stores the forward
//! map value `h(x)`, and the terminal weight `R_H = 2` makes the tracking cost
//! exactly `f(x)`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::admm::{admm_solve, AdmmConfig, AdmmState, OuterTrace};
use crate::eki::{EkiConfig, SamplingCovariance};
use crate::error::Result;
use crate::parallel::Execution;
use crate::problem::{ControlSequence, Dims, Model, ProblemSpec, Weights};
use crate::seeding::{stream_rng, Stream};

pub fn rastrigin_forward(x: [f64; 2]) -> f64 {
    x[0] * x[0] + x[1] * x[1] - 10.0 * (PI * x[0]).cos() - 10.0 * (PI * x[1]).cos()
}

/// `h(x*)` with `x* = (0, 0)`.
pub const TARGET_VALUE: f64 = -20.0;

pub fn rastrigin_misfit(x: [f64; 2]) -> f64 {
    (TARGET_VALUE - rastrigin_forward(x)).powi(2)
}

pub const DISK_CENTERS: [[f64; 2]; 4] = [[0.3, 0.0], [0.0, 2.0], [0.0, -2.0], [2.0, 0.0]];
pub const DISK_RADIUS: f64 = 0.6;

pub fn disk_penalty(x: [f64; 2]) -> f64 {
    DISK_CENTERS
        .iter()
        .map(|c| DISK_RADIUS * DISK_RADIUS - ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)))
        .fold(0.0, f64::max)
}

/// Passthrough model: `x⁺ = h(u)`, `g(x, u) = disk_penalty(u)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct RastriginModel;

impl Model for RastriginModel {
    fn step(&self, _state: &[f64], input: &[f64], next: &mut [f64]) {
        next[0] = rastrigin_forward([input[0], input[1]]);
    }

    fn constraints(&self, _state: &[f64], input: &[f64], out: &mut [f64]) {
        out[0] = disk_penalty([input[0], input[1]]);
    }
}

/// Solver settings for the demo.
#[derive(Debug, Clone, PartialEq)]
pub struct RastriginSettings {
    pub ensemble_size: usize,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub prior_mean: [f64; 2],
    /// Diagonal of the prior (and sampling) covariance.
    pub prior_variance: [f64; 2],
    pub beta0: f64,
    pub gamma: f64,
    pub rho0: f64,
    pub tau: f64,
    /// Weight `Q` on `‖x‖²`; keep it small so it only regularizes.
    pub input_weight: f64,
    pub woodbury_threshold: usize,
    pub execution: Execution,
}

impl Default for RastriginSettings {
    fn default() -> Self {
        RastriginSettings {
            ensemble_size: 50,
            outer_iterations: 10,
            inner_iterations: 20,
            prior_mean: [1.0, 1.0],
            prior_variance: [2.0, 2.0],
            beta0: 1.0,
            gamma: 0.4,
            rho0: 2.0,
            tau: 1.5,
            input_weight: 1e-3,
            woodbury_threshold: 4,
            execution: Execution::default(),
        }
    }
}

impl RastriginSettings {
    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        ProblemSpec::new(
            Dims::new(1, 2, 1, 1),
            Arc::new(RastriginModel),
            Weights::diagonal(&[1.0], &[2.0], &[self.input_weight, self.input_weight]),
            vec![0.0, TARGET_VALUE],
        )
    }

    pub fn admm_config(&self) -> AdmmConfig {
        AdmmConfig {
            outer_iterations: self.outer_iterations,
            tau: self.tau,
            rho0: self.rho0,
            early_stop: None,
        }
    }

    pub fn eki_config(&self, seed: u64) -> EkiConfig {
        EkiConfig {
            ensemble_size: self.ensemble_size,
            iterations: self.inner_iterations,
            sampling: SamplingCovariance::StageDiagonal(vec![
                self.prior_variance[0].sqrt(),
                self.prior_variance[1].sqrt(),
            ]),
            beta0: self.beta0,
            gamma: self.gamma,
            seed,
            woodbury_threshold: self.woodbury_threshold,
            execution: self.execution,
            record_particles: true,
        }
    }
}

/// Particle cloud after one inner iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub outer: usize,
    pub inner: usize,
    pub particles: Vec<[f64; 2]>,
    pub mean: [f64; 2],
    pub beta: f64,
    pub objective: f64,
    pub max_violation: f64,
    pub spread: f64,
}

#[derive(Debug, Clone)]
pub struct DemoResult {
    pub snapshots: Vec<Snapshot>,
    pub final_mean: [f64; 2],
    pub trace: Vec<OuterTrace>,
}

fn points(m: &DMatrix<f64>) -> Vec<[f64; 2]> {
    m.column_iter().map(|c| [c[0], c[1]]).collect()
}

pub fn run_rastrigin_demo(seed: u64, settings: &RastriginSettings) -> Result<DemoResult> {
    let spec = settings.problem_spec()?;
    let admm = settings.admm_config();
    let eki = settings.eki_config(seed);
    let mut rng = stream_rng(seed, Stream::Sampling);
    let mean0 = ControlSequence::new(settings.prior_mean.to_vec(), 2)?;
    let sol = admm_solve(
        &spec,
        &[0.0],
        AdmmState::zeros(1, settings.rho0),
        &mean0,
        &admm,
        &eki,
        &mut rng,
    )?;
    let snapshots = sol
        .inner
        .iter()
        .map(|(outer, d)| {
            let p = d.particles.as_ref().expect("particles are recorded");
            let mean = p.column_mean();
            Snapshot {
                outer: *outer,
                inner: d.iteration,
                particles: points(p),
                mean: [mean[0], mean[1]],
                beta: d.beta,
                objective: d.objective,
                max_violation: d.max_violation,
                spread: d.spread,
            }
        })
        .collect();
    let u = sol.controls.as_slice();
    Ok(DemoResult {
        snapshots,
        final_mean: [u[0], u[1]],
        trace: sol.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn landscape_values() {
        assert_eq!(rastrigin_forward([0.0, 0.0]), -20.0);
        assert_eq!(rastrigin_forward([2.0, 0.0]), -16.0);
        assert_eq!(rastrigin_forward([0.0, 2.0]), -16.0);
        assert_eq!(rastrigin_forward([2.0, 2.0]), -12.0);
    }

    #[test]
    fn misfit_values_and_symmetry() {
        assert_eq!(rastrigin_misfit([0.0, 0.0]), 0.0);
        assert_eq!(rastrigin_misfit([2.0, 0.0]), 16.0);
        for p in [[0.3, 1.7], [2.2, -0.4], [-1.1, 2.9]] {
            let f = rastrigin_misfit(p);
            assert_eq!(f, rastrigin_misfit([-p[0], p[1]]));
            assert_eq!(f, rastrigin_misfit([p[0], -p[1]]));
        }
    }

    #[test]
    fn disk_penalty_values() {
        assert_eq!(disk_penalty([3.0, 3.0]), 0.0);
        assert!((disk_penalty([0.3, 0.0]) - 0.36).abs() < 1e-15);
        assert_eq!(disk_penalty([2.6, 0.0]), 0.0);
        assert!(disk_penalty([0.0, 0.0]) > 0.0);
        assert!(disk_penalty([2.1, 0.1]) > 0.0);
    }

    #[test]
    fn passthrough_cost_equals_misfit() {
        let s = RastriginSettings::default();
        let spec = s.problem_spec().unwrap();
        for p in [[0.5, -1.0], [-2.0, 0.0], [1.3, 2.2]] {
            let u = ControlSequence::new(p.to_vec(), 2).unwrap();
            let x = crate::problem::rollout(&spec, &[0.0], &u).unwrap();
            let j = crate::problem::total_cost(&spec, &x, &u).unwrap();
            let reg = 0.5 * s.input_weight * (p[0] * p[0] + p[1] * p[1]);
            assert!((j - reg - rastrigin_misfit(p)).abs() < 1e-10);
        }
    }

    #[test]
    fn demo_snapshot_bookkeeping() {
        let s = RastriginSettings {
            outer_iterations: 3,
            inner_iterations: 4,
            ..RastriginSettings::default()
        };
        let r = run_rastrigin_demo(1, &s).unwrap();
        assert_eq!(r.snapshots.len(), 12);
        assert_eq!(r.trace.len(), 3);
        assert!(r.snapshots.iter().all(|s| s.particles.len() == 50));
        let r2 = run_rastrigin_demo(1, &s).unwrap();
        assert_eq!(r.final_mean, r2.final_mean);
    }
}
