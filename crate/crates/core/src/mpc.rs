//! Receding-horizon execution: solve, apply the first input, shift, repeat.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use crate::admm::{admm_solve, AdmmConfig, AdmmSolution, AdmmState};
use crate::eki::EkiConfig;
use crate::error::{ensure_len, Error, Result};
use crate::mppi::{mppi_update, MppiConfig};
use crate::problem::{ControlSequence, ProblemSpec};
use crate::seeding::{stream_rng, Stream};

/// `(u_0, …, u_{H−1}) → (u_1, …, u_{H−1}, u_{H−1})`.
pub fn shift_warm_start(prev: &ControlSequence) -> ControlSequence {
    let m = prev.input_dim();
    let v = prev.as_slice();
    let mut out = Vec::with_capacity(v.len());
    out.extend_from_slice(&v[m.min(v.len())..]);
    out.extend_from_slice(&v[v.len() - m..]);
    ControlSequence::new(out, m).expect("shift preserves length")
}

/// Shifts stage blocks of length `block` left by one and zero-fills the last block.
pub fn shift_blocks_zero_fill(v: &[f64], block: usize) -> Vec<f64> {
    if block == 0 || v.is_empty() {
        return v.to_vec();
    }
    let mut out = v[block..].to_vec();
    out.resize(v.len(), 0.0);
    out
}

/// Result of one planning call.
#[derive(Debug, Clone)]
pub struct Plan {
    pub controls: ControlSequence,
    /// Objective of the returned sequence (`Φ` for ADMM-EKI, penalized cost for MPPI).
    pub objective: f64,
    pub max_violation: f64,
}

/// A finite-horizon solver that keeps its own warm start between steps.
pub trait Planner {
    fn name(&self) -> &'static str;

    fn plan(&mut self, spec: &ProblemSpec, x0: &[f64], rng: &mut ChaCha8Rng) -> Result<Plan>;

    /// Called after the first input of the last plan has been applied.
    fn shift(&mut self);
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub controls: ControlSequence,
    pub slack: Vec<f64>,
    pub dual: Vec<f64>,
}

/// ADMM-EKI planner. `ρ` restarts from `ρ⁰` on every step; `(U, S, Y)` carry over.
#[derive(Debug, Clone)]
pub struct AdmmEkiPlanner {
    pub admm: AdmmConfig,
    pub eki: EkiConfig,
    warm: Option<WarmStart>,
    last: Option<AdmmSolution>,
}

impl AdmmEkiPlanner {
    pub fn new(admm: AdmmConfig, eki: EkiConfig) -> Result<Self> {
        admm.validate()?;
        eki.validate()?;
        Ok(AdmmEkiPlanner {
            admm,
            eki,
            warm: None,
            last: None,
        })
    }

    pub fn warm_start(&self) -> Option<&WarmStart> {
        self.warm.as_ref()
    }

    pub fn last_solution(&self) -> Option<&AdmmSolution> {
        self.last.as_ref()
    }
}

impl Planner for AdmmEkiPlanner {
    fn name(&self) -> &'static str {
        "admm-eki"
    }

    fn plan(&mut self, spec: &ProblemSpec, x0: &[f64], rng: &mut ChaCha8Rng) -> Result<Plan> {
        let dims = spec.dims();
        let hq = dims.stacked_constraints_len();
        let warm = self.warm.get_or_insert_with(|| WarmStart {
            controls: spec.zero_controls(),
            slack: vec![0.0; hq],
            dual: vec![0.0; hq],
        });
        let init = AdmmState {
            slack: warm.slack.clone(),
            dual: warm.dual.clone(),
            rho: self.admm.rho0,
            iteration: 0,
        };
        let sol = admm_solve(spec, x0, init, &warm.controls, &self.admm, &self.eki, rng)?;
        *warm = WarmStart {
            controls: sol.controls.clone(),
            slack: sol.state.slack.clone(),
            dual: sol.state.dual.clone(),
        };
        let plan = Plan {
            controls: sol.controls.clone(),
            objective: sol.final_objective(),
            max_violation: sol.final_violation(),
        };
        self.last = Some(sol);
        Ok(plan)
    }

    fn shift(&mut self) {
        if let Some(w) = &mut self.warm {
            let q = w.slack.len() / w.controls.horizon();
            w.controls = shift_warm_start(&w.controls);
            w.slack = shift_blocks_zero_fill(&w.slack, q);
            w.dual = shift_blocks_zero_fill(&w.dual, q);
        }
    }
}

/// Iterated MPPI planner with a shifted mean as warm start.
#[derive(Debug, Clone)]
pub struct MppiPlanner {
    pub cfg: MppiConfig,
    warm: Option<ControlSequence>,
}

impl MppiPlanner {
    pub fn new(cfg: MppiConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(MppiPlanner { cfg, warm: None })
    }
}

impl Planner for MppiPlanner {
    fn name(&self) -> &'static str {
        "mppi-baseline"
    }

    fn plan(&mut self, spec: &ProblemSpec, x0: &[f64], rng: &mut ChaCha8Rng) -> Result<Plan> {
        let mean = self.warm.get_or_insert_with(|| spec.zero_controls());
        let out = mppi_update(spec, x0, mean, &self.cfg, rng)?;
        *mean = out.mean.clone();
        Ok(Plan {
            controls: out.mean,
            objective: out.cost,
            max_violation: out.max_violation,
        })
    }

    fn shift(&mut self) {
        if let Some(w) = &mut self.warm {
            *w = shift_warm_start(w);
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub input: Vec<f64>,
    pub plan: Plan,
}

/// One controller instance driving one plant.
pub struct MpcSession<P> {
    spec: ProblemSpec,
    planner: P,
    rng: ChaCha8Rng,
    step: usize,
}

impl<P: Planner> MpcSession<P> {
    /// The sampling stream is derived from `seed` (see [`crate::seeding`]).
    pub fn new(spec: ProblemSpec, planner: P, seed: u64) -> Self {
        MpcSession {
            spec,
            planner,
            rng: stream_rng(seed, Stream::Sampling),
            step: 0,
        }
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn planner(&self) -> &P {
        &self.planner
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn set_reference(&mut self, reference: Vec<f64>) -> Result<()> {
        self.spec = self.spec.with_reference(reference)?;
        Ok(())
    }

    /// Solves from `x_now`, returns the first input and shifts the warm start.
    pub fn mpc_step(&mut self, x_now: &[f64]) -> Result<StepOutcome> {
        ensure_len("current state", self.spec.dims().state, x_now.len())?;
        let plan = self
            .planner
            .plan(&self.spec, x_now, &mut self.rng)
            .map_err(|e| Error::Step {
                step: self.step,
                source: Box::new(e),
            })?;
        let input = plan.controls.stage(0).to_vec();
        self.planner.shift();
        self.step += 1;
        Ok(StepOutcome { input, plan })
    }
}

/// What the plant reports after each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub speed: f64,
    pub tracking_error: f64,
    /// Smallest distance to an obstacle surface; negative inside. `+∞` without obstacles.
    pub clearance: f64,
}

/// The plant and task the controller runs against.
pub trait Environment {
    fn initial_state(&self) -> Vec<f64>;

    /// Clears any task progress.
    fn reset(&mut self);

    /// Reference `Z` for a horizon starting at `state`.
    fn reference(&self, state: &[f64]) -> Result<Vec<f64>>;

    /// True transition; also updates task progress.
    fn advance(&mut self, state: &[f64], input: &[f64]) -> Result<Vec<f64>>;

    fn observe(&self, state: &[f64]) -> Observation;

    fn is_complete(&self, state: &[f64]) -> bool;

    /// Failure that ends the episode early (for example a collision).
    fn is_terminal(&self, _state: &[f64]) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub input: Vec<f64>,
    /// State after applying `input`.
    pub state: Vec<f64>,
    pub speed: f64,
    pub tracking_error: f64,
    pub clearance: f64,
    pub solve_seconds: f64,
    pub objective: f64,
    pub max_violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub controller: String,
    pub mean_speed: f64,
    pub max_speed: f64,
    pub mean_error: f64,
    pub max_error: f64,
    pub total_steps: usize,
    pub collisions: usize,
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub controller: String,
    pub rows: Vec<StepRow>,
    pub completed: bool,
    /// Stopped by [`Environment::is_terminal`].
    pub terminated: bool,
}

impl RunRecord {
    /// Episode summary, recomputed from the rows.
    pub fn summary(&self) -> Summary {
        let n = self.rows.len();
        let mean = |f: fn(&StepRow) -> f64| {
            if n == 0 {
                0.0
            } else {
                self.rows.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let max = |f: fn(&StepRow) -> f64| self.rows.iter().map(f).fold(0.0_f64, f64::max);
        Summary {
            controller: self.controller.clone(),
            mean_speed: mean(|r| r.speed),
            max_speed: max(|r| r.speed),
            mean_error: mean(|r| r.tracking_error),
            max_error: max(|r| r.tracking_error),
            total_steps: n,
            collisions: self.rows.iter().filter(|r| r.clearance < 0.0).count(),
            completed: self.completed,
        }
    }
}

/// Runs until the environment reports completion or a terminal failure, or
/// until `max_steps` inputs were applied.
pub fn run_episode<P: Planner, E: Environment>(
    session: &mut MpcSession<P>,
    env: &mut E,
    max_steps: usize,
) -> Result<RunRecord> {
    env.reset();
    let mut x = env.initial_state();
    let mut rows = Vec::new();
    let mut terminated = false;
    for step in 0..max_steps {
        if env.is_complete(&x) {
            break;
        }
        if env.is_terminal(&x) {
            terminated = true;
            break;
        }
        session.set_reference(env.reference(&x)?)?;
        let started = Instant::now();
        let out = session.mpc_step(&x)?;
        let solve_seconds = started.elapsed().as_secs_f64();
        x = env.advance(&x, &out.input)?;
        let obs = env.observe(&x);
        rows.push(StepRow {
            step,
            input: out.input,
            state: x.clone(),
            speed: obs.speed,
            tracking_error: obs.tracking_error,
            clearance: obs.clearance,
            solve_seconds,
            objective: out.plan.objective,
            max_violation: out.plan.max_violation,
        });
    }
    Ok(RunRecord {
        controller: session.planner.name().to_string(),
        completed: env.is_complete(&x),
        terminated: terminated || env.is_terminal(&x),
        rows,
    })
}
