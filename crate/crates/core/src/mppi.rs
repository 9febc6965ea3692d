//! Iterated MPPI baseline with annealed sampling.
//!
//! Each refinement iteration samples `N` perturbed sequences around the running
//! mean, scores them with `J + (ρ_pen/2)‖[G]⁺‖²`, and replaces the mean by the
//! softmax-weighted average. The perturbation covariance follows the same
//! `β₀ e^{−γk}` schedule as the EKI solver.

use nalgebra::DMatrix;
use rand::Rng;

use crate::eki::{sample_ensemble, SamplingCovariance};
use crate::error::{ensure_len, Error, Result};
use crate::parallel::Execution;
use crate::problem::{max_violation, ControlSequence, ProblemSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct MppiConfig {
    pub samples: usize,
    /// Temperature `λ > 0`; `f64::INFINITY` gives uniform weights.
    pub temperature: f64,
    /// Refinement iterations `M + 1`.
    pub iterations: usize,
    pub sampling: SamplingCovariance,
    pub beta0: f64,
    pub gamma: f64,
    /// Quadratic penalty weight on positive constraint values.
    pub penalty: f64,
    pub execution: Execution,
}

impl MppiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::param("samples", "at least one sample is required"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::param("temperature", "must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::param("iterations", "must be positive"));
        }
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return Err(Error::param("beta0", "must be positive"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::param("gamma", "must be nonnegative"));
        }
        if !(self.penalty >= 0.0 && self.penalty.is_finite()) {
            return Err(Error::param("penalty", "must be nonnegative"));
        }
        Ok(())
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.beta0 * (-self.gamma * k as f64).exp()
    }
}

/// Normalized importance weights `w_i ∝ exp(−(c_i − min c)/λ)`.
///
/// Non-finite costs get zero weight.
pub fn softmax_weights(costs: &[f64], temperature: f64) -> Result<Vec<f64>> {
    let min = costs
        .iter()
        .cloned()
        .filter(|c| c.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::NonFiniteCosts);
    }
    let raw: Vec<f64> = costs
        .iter()
        .map(|c| {
            if c.is_finite() {
                (-(c - min) / temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Rollout cost with the soft constraint penalty; diverged rollouts score `+∞`.
pub fn penalized_cost(spec: &ProblemSpec, x0: &[f64], controls: &[f64], penalty: f64) -> f64 {
    let dims = spec.dims();
    let mut states = vec![0.0; dims.states_len()];
    if spec.rollout_into(x0, controls, &mut states).is_err() {
        return f64::INFINITY;
    }
    let mut g = vec![0.0; dims.stacked_constraints_len()];
    spec.constraints_into(&states, controls, &mut g);
    let violation: f64 = g.iter().map(|v| v.max(0.0).powi(2)).sum();
    spec.cost_raw(&states, controls) + 0.5 * penalty * violation
}

#[derive(Debug, Clone)]
pub struct MppiOutcome {
    pub mean: ControlSequence,
    /// Weights from the last refinement iteration.
    pub weights: Vec<f64>,
    /// Penalized cost of the returned mean.
    pub cost: f64,
    pub max_violation: f64,
}

fn weighted_average(samples: &DMatrix<f64>, weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; samples.nrows()];
    for (col, w) in samples.column_iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(col.iter()) {
            *o += w * v;
        }
    }
    out
}

pub fn mppi_update<R: Rng + ?Sized>(
    spec: &ProblemSpec,
    x0: &[f64],
    mean: &ControlSequence,
    cfg: &MppiConfig,
    rng: &mut R,
) -> Result<MppiOutcome> {
    cfg.validate()?;
    let dims = spec.dims();
    ensure_len("mean", dims.controls_len(), mean.as_slice().len())?;
    let factor = cfg.sampling.factor(dims)?;
    let hm = dims.controls_len();
    let mut current = mean.clone();
    let mut weights = Vec::new();
    for k in 0..cfg.iterations {
        let samples = sample_ensemble(&current, &factor, cfg.samples, cfg.beta(k), spec.bounds(), rng)?;
        let all = samples.as_slice();
        let costs = cfg.execution.map(cfg.samples, |i| {
            penalized_cost(spec, x0, &all[i * hm..(i + 1) * hm], cfg.penalty)
        });
        weights = softmax_weights(&costs, cfg.temperature)?;
        let mut next = weighted_average(&samples, &weights);
        spec.clamp(&mut next);
        current = ControlSequence::new(next, dims.input)?;
    }
    let mut states = vec![0.0; dims.states_len()];
    spec.rollout_into(x0, current.as_slice(), &mut states)?;
    let mut g = vec![0.0; dims.stacked_constraints_len()];
    spec.constraints_into(&states, current.as_slice(), &mut g);
    Ok(MppiOutcome {
        cost: penalized_cost(spec, x0, current.as_slice(), cfg.penalty),
        max_violation: max_violation(&g),
        mean: current,
        weights,
    })
}
