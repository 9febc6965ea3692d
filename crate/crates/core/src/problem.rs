//! Optimal control problem definition and deterministic rollout.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_len, Error, Result};

/// Discrete-time model: dynamics `x⁺ = f(x, u)` plus stage constraints `g(x, u) ≤ 0`.
///
/// Implementations must be pure; rollouts of many particles call into the same
/// model concurrently.
pub trait Model: Send + Sync {
    fn step(&self, state: &[f64], input: &[f64], next: &mut [f64]);

    /// Writes the `q` stage constraint values. Unconstrained models keep the default.
    fn constraints(&self, _state: &[f64], _input: &[f64], _out: &mut [f64]) {}
}

/// A [`Model`] assembled from two closures.
pub struct FnModel<F, G> {
    dynamics: F,
    constraints: G,
}

impl<F> FnModel<F, fn(&[f64], &[f64], &mut [f64])>
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
{
    pub fn unconstrained(dynamics: F) -> Self {
        fn none(_: &[f64], _: &[f64], _: &mut [f64]) {}
        FnModel {
            dynamics,
            constraints: none,
        }
    }
}

impl<F, G> FnModel<F, G>
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
    G: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(dynamics: F, constraints: G) -> Self {
        FnModel {
            dynamics,
            constraints,
        }
    }
}

impl<F, G> Model for FnModel<F, G>
where
    F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
    G: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync,
{
    fn step(&self, state: &[f64], input: &[f64], next: &mut [f64]) {
        (self.dynamics)(state, input, next)
    }

    fn constraints(&self, state: &[f64], input: &[f64], out: &mut [f64]) {
        (self.constraints)(state, input, out)
    }
}

/// Problem dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// State dimension `n`.
    pub state: usize,
    /// Input dimension `m`.
    pub input: usize,
    /// Constraints per stage `q`.
    pub constraints: usize,
    /// Horizon `H`.
    pub horizon: usize,
}

impl Dims {
    pub fn new(state: usize, input: usize, constraints: usize, horizon: usize) -> Self {
        Dims {
            state,
            input,
            constraints,
            horizon,
        }
    }

    /// `H·m`
    pub fn controls_len(&self) -> usize {
        self.horizon * self.input
    }

    /// `(H+1)·n`
    pub fn states_len(&self) -> usize {
        (self.horizon + 1) * self.state
    }

    /// `H·q`
    pub fn stacked_constraints_len(&self) -> usize {
        self.horizon * self.constraints
    }

    /// Residual length `d = Hm + (H+1)n + Hq`.
    pub fn residual_len(&self) -> usize {
        self.controls_len() + self.states_len() + self.stacked_constraints_len()
    }
}

/// Quadratic cost weights: `R` on stage states, `R_H` on the terminal state, `Q` on inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub state: DMatrix<f64>,
    pub terminal: DMatrix<f64>,
    pub input: DMatrix<f64>,
}

impl Weights {
    pub fn diagonal(state: &[f64], terminal: &[f64], input: &[f64]) -> Self {
        Weights {
            state: DMatrix::from_diagonal(&DVector::from_row_slice(state)),
            terminal: DMatrix::from_diagonal(&DVector::from_row_slice(terminal)),
            input: DMatrix::from_diagonal(&DVector::from_row_slice(input)),
        }
    }

    pub fn identity(n: usize, m: usize) -> Self {
        Weights {
            state: DMatrix::identity(n, n),
            terminal: DMatrix::identity(n, n),
            input: DMatrix::identity(m, m),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Weights {
            state: &self.state * c,
            terminal: &self.terminal * c,
            input: &self.input * c,
        }
    }
}

/// Component-wise input box, applied identically at every stage.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InputBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        ensure_len("input bounds", lower.len(), upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::param("bounds", "every lower bound must not exceed its upper bound"));
        }
        Ok(InputBounds { lower, upper })
    }

    pub fn symmetric(limits: &[f64]) -> Result<Self> {
        Self::new(limits.iter().map(|l| -l).collect(), limits.to_vec())
    }

    /// Clamps a stacked control vector stage by stage.
    pub fn clamp(&self, controls: &mut [f64]) {
        let m = self.lower.len();
        for (j, v) in controls.iter_mut().enumerate() {
            *v = v.clamp(self.lower[j % m], self.upper[j % m]);
        }
    }

    pub fn contains(&self, controls: &[f64]) -> bool {
        let m = self.lower.len();
        controls
            .iter()
            .enumerate()
            .all(|(j, v)| *v >= self.lower[j % m] && *v <= self.upper[j % m])
    }
}

/// Returns `Ok` when `a` is symmetric with strictly positive spectrum.
pub fn check_spd(name: &'static str, a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::NotPositiveDefinite { name });
    }
    let scale = a.amax().max(1.0);
    if (a - a.transpose()).amax() > 1e-10 * scale {
        return Err(Error::NotPositiveDefinite { name });
    }
    let min_eig = a
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig > 0.0 && a.clone().cholesky().is_some() {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite { name })
    }
}

/// Everything the constrained finite-horizon problem needs.
///
/// Immutable once built; cloning is cheap apart from the reference vector,
/// because the model sits behind an `Arc`.
#[derive(Clone)]
pub struct ProblemSpec {
    dims: Dims,
    model: Arc<dyn Model>,
    weights: Weights,
    reference: Vec<f64>,
    bounds: Option<InputBounds>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("dims", &self.dims)
            .field("weights", &self.weights)
            .field("reference", &self.reference)
            .field("bounds", &self.bounds)
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    /// `reference` is the flat `Z = (z_0, …, z_H)`.
    pub fn new(
        dims: Dims,
        model: Arc<dyn Model>,
        weights: Weights,
        reference: Vec<f64>,
    ) -> Result<Self> {
        if dims.state == 0 {
            return Err(Error::param("state_dim", "must be positive"));
        }
        if dims.input == 0 {
            return Err(Error::param("input_dim", "must be positive"));
        }
        if dims.horizon == 0 {
            return Err(Error::param("horizon", "must be positive"));
        }
        ensure_len("state weight R", dims.state, weights.state.nrows())?;
        ensure_len("terminal weight R_H", dims.state, weights.terminal.nrows())?;
        ensure_len("input weight Q", dims.input, weights.input.nrows())?;
        check_spd("R", &weights.state)?;
        check_spd("R_H", &weights.terminal)?;
        check_spd("Q", &weights.input)?;
        ensure_len("reference trajectory", dims.states_len(), reference.len())?;
        Ok(ProblemSpec {
            dims,
            model,
            weights,
            reference,
            bounds: None,
        })
    }

    pub fn with_bounds(mut self, bounds: InputBounds) -> Result<Self> {
        ensure_len("input bounds", self.dims.input, bounds.lower.len())?;
        self.bounds = Some(bounds);
        Ok(self)
    }

    /// Same problem, new reference trajectory.
    pub fn with_reference(&self, reference: Vec<f64>) -> Result<Self> {
        ensure_len("reference trajectory", self.dims.states_len(), reference.len())?;
        Ok(ProblemSpec {
            reference,
            ..self.clone()
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn model(&self) -> &Arc<dyn Model> {
        &self.model
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn bounds(&self) -> Option<&InputBounds> {
        self.bounds.as_ref()
    }

    pub fn clamp(&self, controls: &mut [f64]) {
        if let Some(b) = &self.bounds {
            b.clamp(controls);
        }
    }

    pub fn zero_controls(&self) -> ControlSequence {
        ControlSequence::zeros(self.dims.horizon, self.dims.input)
    }

    /// Rolls out into a caller-owned buffer of length `(H+1)n`.
    pub fn rollout_into(&self, x0: &[f64], controls: &[f64], states: &mut [f64]) -> Result<()> {
        ensure_len("initial state", self.dims.state, x0.len())?;
        ensure_len("control sequence", self.dims.controls_len(), controls.len())?;
        ensure_len("state buffer", self.dims.states_len(), states.len())?;
        simulate_into(self.model.as_ref(), x0, controls, self.dims.input, states)
    }

    /// Writes `G(X, U)` into `out` (length `Hq`).
    pub fn constraints_into(&self, states: &[f64], controls: &[f64], out: &mut [f64]) {
        let Dims {
            state: n,
            input: m,
            constraints: q,
            horizon,
        } = self.dims;
        if q == 0 {
            return;
        }
        for t in 0..horizon {
            self.model.constraints(
                &states[t * n..(t + 1) * n],
                &controls[t * m..(t + 1) * m],
                &mut out[t * q..(t + 1) * q],
            );
        }
    }

    /// Cost on raw slices; dimensions are assumed checked.
    pub(crate) fn cost_raw(&self, states: &[f64], controls: &[f64]) -> f64 {
        let Dims {
            state: n,
            input: m,
            horizon,
            ..
        } = self.dims;
        let mut err = vec![0.0; n];
        let mut total = 0.0;
        for t in 0..=horizon {
            for i in 0..n {
                err[i] = states[t * n + i] - self.reference[t * n + i];
            }
            let w = if t == horizon {
                &self.weights.terminal
            } else {
                &self.weights.state
            };
            total += quad_form(w, &err);
        }
        for t in 0..horizon {
            total += quad_form(&self.weights.input, &controls[t * m..(t + 1) * m]);
        }
        0.5 * total
    }
}

fn quad_form(w: &DMatrix<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for j in 0..n {
        let mut col = 0.0;
        for i in 0..n {
            col += w[(i, j)] * v[i];
        }
        acc += col * v[j];
    }
    acc
}

/// Rolls `model` forward from `x0` for as many stages as `controls` holds.
pub fn simulate(model: &dyn Model, x0: &[f64], controls: &[f64], input_dim: usize) -> Result<Vec<f64>> {
    let n = x0.len();
    let stages = controls.len() / input_dim;
    let mut states = vec![0.0; (stages + 1) * n];
    simulate_into(model, x0, controls, input_dim, &mut states)?;
    Ok(states)
}

fn simulate_into(
    model: &dyn Model,
    x0: &[f64],
    controls: &[f64],
    m: usize,
    states: &mut [f64],
) -> Result<()> {
    let n = x0.len();
    states[..n].copy_from_slice(x0);
    for t in 0..controls.len() / m {
        let (done, rest) = states.split_at_mut((t + 1) * n);
        let next = &mut rest[..n];
        model.step(&done[t * n..], &controls[t * m..(t + 1) * m], next);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::RolloutDiverged { stage: t + 1 });
        }
    }
    Ok(())
}

/// Flat control sequence `U = (u_0, …, u_{H−1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    values: Vec<f64>,
    input_dim: usize,
}

impl ControlSequence {
    pub fn new(values: Vec<f64>, input_dim: usize) -> Result<Self> {
        if input_dim == 0 || values.is_empty() || !values.len().is_multiple_of(input_dim) {
            return Err(Error::dim("control sequence", input_dim.max(1), values.len()));
        }
        Ok(ControlSequence { values, input_dim })
    }

    pub fn zeros(horizon: usize, input_dim: usize) -> Self {
        ControlSequence {
            values: vec![0.0; horizon * input_dim],
            input_dim,
        }
    }

    pub fn horizon(&self) -> usize {
        self.values.len() / self.input_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn stage(&self, t: usize) -> &[f64] {
        &self.values[t * self.input_dim..(t + 1) * self.input_dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

/// Flat state trajectory `X = (x_0, …, x_H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    values: Vec<f64>,
    state_dim: usize,
}

impl StateTrajectory {
    pub fn stages(&self) -> usize {
        self.values.len() / self.state_dim
    }

    pub fn stage(&self, t: usize) -> &[f64] {
        &self.values[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

/// `X = F(x̄, U)`.
pub fn rollout(spec: &ProblemSpec, x0: &[f64], controls: &ControlSequence) -> Result<StateTrajectory> {
    let mut values = vec![0.0; spec.dims.states_len()];
    spec.rollout_into(x0, controls.as_slice(), &mut values)?;
    Ok(StateTrajectory {
        values,
        state_dim: spec.dims.state,
    })
}

/// `J(X, U)`: half the weighted tracking error plus input energy.
pub fn total_cost(spec: &ProblemSpec, states: &StateTrajectory, controls: &ControlSequence) -> Result<f64> {
    ensure_len("state trajectory", spec.dims.states_len(), states.values.len())?;
    ensure_len("control sequence", spec.dims.controls_len(), controls.values.len())?;
    Ok(spec.cost_raw(&states.values, &controls.values))
}

/// Stacked stage constraints `G(X, U)`, stage blocks in time order.
pub fn eval_constraints(
    spec: &ProblemSpec,
    states: &StateTrajectory,
    controls: &ControlSequence,
) -> Result<Vec<f64>> {
    ensure_len("state trajectory", spec.dims.states_len(), states.values.len())?;
    ensure_len("control sequence", spec.dims.controls_len(), controls.values.len())?;
    let mut out = vec![0.0; spec.dims.stacked_constraints_len()];
    spec.constraints_into(&states.values, &controls.values, &mut out);
    Ok(out)
}

/// Splits a stacked constraint vector into per-stage blocks.
pub fn destack(stacked: &[f64], per_stage: usize) -> Vec<Vec<f64>> {
    if per_stage == 0 {
        return Vec::new();
    }
    stacked.chunks(per_stage).map(<[f64]>::to_vec).collect()
}

pub fn stack(blocks: &[Vec<f64>]) -> Vec<f64> {
    blocks.concat()
}

/// Largest positive component, or zero when all are feasible.
pub fn max_violation(stacked: &[f64]) -> f64 {
    stacked.iter().fold(0.0_f64, |acc, v| acc.max(*v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn integrator(horizon: usize) -> ProblemSpec {
        let model = FnModel::unconstrained(|x: &[f64], u: &[f64], next: &mut [f64]| {
            next[0] = x[0] + u[0];
        });
        ProblemSpec::new(
            Dims::new(1, 1, 0, horizon),
            Arc::new(model),
            Weights::identity(1, 1),
            vec![0.0; horizon + 1],
        )
        .unwrap()
    }

    #[test]
    fn integrator_telescopes() {
        let spec = integrator(3);
        let u = ControlSequence::new(vec![1.0, 1.0, 1.0], 1).unwrap();
        let x = rollout(&spec, &[0.0], &u).unwrap();
        assert_eq!(x.as_slice(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn divergence_names_stage() {
        let model = FnModel::unconstrained(|x: &[f64], u: &[f64], next: &mut [f64]| {
            next[0] = if u[0] > 5.0 { f64::NAN } else { x[0] + u[0] };
        });
        let spec = ProblemSpec::new(
            Dims::new(1, 1, 0, 3),
            Arc::new(model),
            Weights::identity(1, 1),
            vec![0.0; 4],
        )
        .unwrap();
        let u = ControlSequence::new(vec![1.0, 9.0, 1.0], 1).unwrap();
        assert_eq!(
            rollout(&spec, &[0.0], &u).unwrap_err(),
            Error::RolloutDiverged { stage: 2 }
        );
    }

    #[test]
    fn cost_hand_example() {
        let spec = integrator(1);
        let x = StateTrajectory {
            values: vec![0.0, 2.0],
            state_dim: 1,
        };
        let u = ControlSequence::new(vec![3.0], 1).unwrap();
        assert_eq!(total_cost(&spec, &x, &u).unwrap(), 6.5);
    }

    #[test]
    fn cost_zero_at_reference() {
        let spec = integrator(4);
        let x = StateTrajectory {
            values: spec.reference().to_vec(),
            state_dim: 1,
        };
        assert_eq!(total_cost(&spec, &x, &spec.zero_controls()).unwrap(), 0.0);
    }

    #[test]
    fn cost_rejects_wrong_lengths() {
        let spec = integrator(2);
        let x = StateTrajectory {
            values: vec![0.0; 2],
            state_dim: 1,
        };
        assert!(matches!(
            total_cost(&spec, &x, &spec.zero_controls()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn unconstrained_stack_is_empty() {
        let spec = integrator(3);
        let u = spec.zero_controls();
        let x = rollout(&spec, &[0.0], &u).unwrap();
        assert!(eval_constraints(&spec, &x, &u).unwrap().is_empty());
    }

    #[test]
    fn constraint_layout_is_time_major() {
        let model = FnModel::new(
            |x: &[f64], u: &[f64], next: &mut [f64]| next[0] = x[0] + u[0],
            |x: &[f64], u: &[f64], g: &mut [f64]| {
                g[0] = x[0];
                g[1] = u[0];
            },
        );
        let spec = ProblemSpec::new(
            Dims::new(1, 1, 2, 3),
            Arc::new(model),
            Weights::identity(1, 1),
            vec![0.0; 4],
        )
        .unwrap();
        let u = ControlSequence::new(vec![1.0, 2.0, 3.0], 1).unwrap();
        let x = rollout(&spec, &[0.5], &u).unwrap();
        let g = eval_constraints(&spec, &x, &u).unwrap();
        assert_eq!(g, vec![0.5, 1.0, 1.5, 2.0, 3.5, 3.0]);
        assert_eq!(stack(&destack(&g, 2)), g);
    }

    #[test]
    fn weights_must_be_positive_definite() {
        let model = FnModel::unconstrained(|x: &[f64], _: &[f64], n: &mut [f64]| n[0] = x[0]);
        let err = ProblemSpec::new(
            Dims::new(1, 1, 0, 1),
            Arc::new(model),
            Weights::diagonal(&[1.0], &[1.0], &[0.0]),
            vec![0.0; 2],
        )
        .unwrap_err();
        assert_eq!(err, Error::NotPositiveDefinite { name: "Q" });
    }

    #[test]
    fn reference_length_checked() {
        let model = FnModel::unconstrained(|x: &[f64], _: &[f64], n: &mut [f64]| n[0] = x[0]);
        assert!(ProblemSpec::new(
            Dims::new(1, 1, 0, 3),
            Arc::new(model),
            Weights::identity(1, 1),
            vec![0.0; 3],
        )
        .is_err());
    }

    fn pendulum(horizon: usize) -> ProblemSpec {
        let model = FnModel::unconstrained(|x: &[f64], u: &[f64], next: &mut [f64]| {
            next[0] = x[0] + 0.1 * x[1];
            next[1] = x[1] - 0.1 * x[0].sin() + 0.1 * u[0];
        });
        ProblemSpec::new(
            Dims::new(2, 1, 0, horizon),
            Arc::new(model),
            Weights::diagonal(&[2.0, 0.5], &[3.0, 1.0], &[0.7]),
            (0..2 * (horizon + 1)).map(|i| (i as f64 * 0.3).cos()).collect(),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn rollout_is_deterministic_and_markov(
            us in proptest::collection::vec(-2.0..2.0f64, 6),
            x0 in proptest::collection::vec(-1.0..1.0f64, 2),
            cut in 1usize..6,
        ) {
            let spec = pendulum(6);
            let u = ControlSequence::new(us.clone(), 1).unwrap();
            let a = rollout(&spec, &x0, &u).unwrap();
            let b = rollout(&spec, &x0, &u).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.stage(0), &x0[..]);
            let prefix = simulate(spec.model().as_ref(), &x0, &us[..cut], 1).unwrap();
            prop_assert_eq!(&prefix[..], &a.as_slice()[..(cut + 1) * 2]);
        }

        #[test]
        fn cost_nonnegative_and_homogeneous(
            us in proptest::collection::vec(-2.0..2.0f64, 4),
            c in 0.1..10.0f64,
        ) {
            let spec = pendulum(4);
            let u = ControlSequence::new(us, 1).unwrap();
            let x = rollout(&spec, &[0.2, -0.1], &u).unwrap();
            let j = total_cost(&spec, &x, &u).unwrap();
            prop_assert!(j >= 0.0);
            let scaled = ProblemSpec::new(
                spec.dims(),
                spec.model().clone(),
                spec.weights().scaled(c),
                spec.reference().to_vec(),
            ).unwrap();
            let jc = total_cost(&scaled, &x, &u).unwrap();
            prop_assert!((jc - c * j).abs() <= 1e-12 * (1.0 + jc.abs()));
        }
    }
}
