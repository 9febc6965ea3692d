//! Two-block ADMM outer loop around the EKI primal step.
//!
//! Per outer iteration `ℓ`:
//! 1. `U ← argmin Φ(U)` (inexact, via [`eki_inner_loop`]),
//! 2. `S ← [−G(U) − Y]⁺`,
//! 3. `Y ← Y + G(U) + S`,
//! 4. `ρ ← τ ρ`.

use rand::Rng;

use crate::eki::{eki_inner_loop, EkiConfig, EkiOutcome, InnerDiagnostics};
use crate::error::{ensure_len, Error, Result};
use crate::problem::{max_violation, ControlSequence, ProblemSpec};

/// Augmented primal objective evaluated at one control sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    /// `Φ = J + (ρ/2)‖G + S + Y‖²`.
    pub value: f64,
    pub cost: f64,
    pub constraints: Vec<f64>,
    pub max_violation: f64,
}

pub fn primal_objective(
    spec: &ProblemSpec,
    x0: &[f64],
    controls: &ControlSequence,
    slack: &[f64],
    dual: &[f64],
    rho: f64,
) -> Result<Objective> {
    let dims = spec.dims();
    ensure_len("slack", dims.stacked_constraints_len(), slack.len())?;
    ensure_len("dual", dims.stacked_constraints_len(), dual.len())?;
    let mut states = vec![0.0; dims.states_len()];
    spec.rollout_into(x0, controls.as_slice(), &mut states)?;
    let cost = spec.cost_raw(&states, controls.as_slice());
    let mut constraints = vec![0.0; dims.stacked_constraints_len()];
    spec.constraints_into(&states, controls.as_slice(), &mut constraints);
    let penalty: f64 = constraints
        .iter()
        .zip(slack)
        .zip(dual)
        .map(|((g, s), y)| (g + s + y).powi(2))
        .sum();
    Ok(Objective {
        value: cost + 0.5 * rho * penalty,
        cost,
        max_violation: max_violation(&constraints),
        constraints,
    })
}

/// Slack, scaled dual and penalty carried between outer iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub slack: Vec<f64>,
    pub dual: Vec<f64>,
    pub rho: f64,
    pub iteration: usize,
}

impl AdmmState {
    /// Zero slack and dual, as on the first MPC step.
    pub fn zeros(len: usize, rho: f64) -> Self {
        AdmmState {
            slack: vec![0.0; len],
            dual: vec![0.0; len],
            rho,
            iteration: 0,
        }
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        ensure_len("slack", len, self.slack.len())?;
        ensure_len("dual", len, self.dual.len())?;
        if self.slack.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::param("slack", "must be nonnegative"));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::param("rho", "penalty must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub primal: f64,
    pub dual: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            primal: 1e-3,
            dual: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmConfig {
    /// Outer iterations `L + 1`.
    pub outer_iterations: usize,
    /// Penalty growth `τ ≥ 1`.
    pub tau: f64,
    /// Initial penalty `ρ⁰ > 0`.
    pub rho0: f64,
    /// Residual-based early stop; off when `None`.
    pub early_stop: Option<Tolerances>,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            outer_iterations: 10,
            tau: 2.0,
            rho0: 1.0,
            early_stop: None,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iterations == 0 {
            return Err(Error::param("outer_iterations", "must be positive"));
        }
        if !(self.tau >= 1.0 && self.tau.is_finite()) {
            return Err(Error::param("tau", format!("penalty growth must satisfy tau >= 1, got {}", self.tau)));
        }
        if !(self.rho0 > 0.0 && self.rho0.is_finite()) {
            return Err(Error::param("rho0", "initial penalty must be positive"));
        }
        if let Some(t) = self.early_stop {
            if !(t.primal > 0.0 && t.dual > 0.0) {
                return Err(Error::param("early_stop", "tolerances must be positive"));
            }
        }
        Ok(())
    }
}

/// `S = [−G − Y]⁺`, the projection of `−G − Y` onto the nonnegative orthant.
pub fn slack_update(constraints: &[f64], dual: &[f64]) -> Vec<f64> {
    constraints
        .iter()
        .zip(dual)
        .map(|(g, y)| (-g - y).max(0.0))
        .collect()
}

/// `Y' = Y + G + S'`.
pub fn dual_update(dual: &[f64], constraints: &[f64], slack: &[f64]) -> Vec<f64> {
    dual.iter()
        .zip(constraints)
        .zip(slack)
        .map(|((y, g), s)| y + g + s)
        .collect()
}

/// Inexact primal step: the EKI inner loop on `Φ^ℓ`, started from `warm_mean`.
pub fn primal_update<R: Rng + ?Sized>(
    spec: &ProblemSpec,
    x0: &[f64],
    state: &AdmmState,
    warm_mean: &ControlSequence,
    eki: &EkiConfig,
    rng: &mut R,
) -> Result<EkiOutcome> {
    state.validate(spec.dims().stacked_constraints_len())?;
    eki_inner_loop(spec, x0, warm_mean, &state.slack, &state.dual, state.rho, eki, rng)
}

/// One row of the outer-loop trace.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterTrace {
    pub iteration: usize,
    /// `Φ^ℓ` at the new primal iterate.
    pub objective: f64,
    pub max_violation: f64,
    /// Penalty `ρ^ℓ` used in this iteration.
    pub rho: f64,
    /// `‖G + S^{ℓ+1}‖∞`
    pub primal_residual: f64,
    /// `‖ρ (S^{ℓ+1} − S^ℓ)‖∞`
    pub dual_residual: f64,
}

#[derive(Debug, Clone)]
pub struct AdmmSolution {
    pub controls: ControlSequence,
    pub state: AdmmState,
    pub trace: Vec<OuterTrace>,
    /// Inner diagnostics tagged with their outer iteration.
    pub inner: Vec<(usize, InnerDiagnostics)>,
}

impl AdmmSolution {
    pub fn final_objective(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.objective)
    }

    pub fn final_violation(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |t| t.max_violation)
    }
}

fn inf_norm<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    it.into_iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// Runs `ℓ = 0..=L` outer iterations (or fewer with early stopping).
pub fn admm_solve<R: Rng + ?Sized>(
    spec: &ProblemSpec,
    x0: &[f64],
    init: AdmmState,
    warm_mean: &ControlSequence,
    cfg: &AdmmConfig,
    eki: &EkiConfig,
    rng: &mut R,
) -> Result<AdmmSolution> {
    cfg.validate()?;
    init.validate(spec.dims().stacked_constraints_len())?;
    let rho_start = init.rho;
    let mut state = init;
    let mut mean = warm_mean.clone();
    let mut trace = Vec::with_capacity(cfg.outer_iterations);
    let mut inner = Vec::new();

    for l in 0..cfg.outer_iterations {
        let outcome = primal_update(spec, x0, &state, &mean, eki, rng).map_err(|e| Error::Outer {
            iteration: l,
            source: Box::new(e),
        })?;
        let g = &outcome.objective.constraints;
        let slack = slack_update(g, &state.dual);
        let dual = dual_update(&state.dual, g, &slack);
        let primal_residual = inf_norm(g.iter().zip(&slack).map(|(g, s)| g + s));
        let dual_residual = inf_norm(slack.iter().zip(&state.slack).map(|(a, b)| state.rho * (a - b)));

        trace.push(OuterTrace {
            iteration: l,
            objective: outcome.objective.value,
            max_violation: outcome.objective.max_violation,
            rho: state.rho,
            primal_residual,
            dual_residual,
        });
        inner.extend(outcome.diagnostics.into_iter().map(|d| (l, d)));
        mean = outcome.mean;

        // ρ^{ℓ+1} = τ ρ^ℓ, written in closed form so the schedule is exactly ρ⁰ τ^{ℓ+1}.
        state = AdmmState {
            slack,
            dual,
            rho: rho_start * cfg.tau.powi(l as i32 + 1),
            iteration: l + 1,
        };

        if let Some(tol) = cfg.early_stop {
            if primal_residual <= tol.primal && dual_residual <= tol.dual {
                break;
            }
        }
    }

    Ok(AdmmSolution {
        controls: mean,
        state,
        trace,
        inner,
    })
}
