//! Annealed ensemble Kalman inversion: the inexact primal solver.
//!
//! Each inner iteration re-samples particles around the running mean, rolls
//! every particle out to assemble its residual
//! `C_i = [U_i; F(x̄, U_i) − Z; G(x̄, U_i) + S + Y]`, forms ensemble
//! statistics, computes one Kalman gain shared by the whole ensemble and moves
//! every particle by `U_i ← U_i − K C_i`. The sampling temperature decays as
//! `β_k = β₀ e^{−γk}`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::admm::{primal_objective, Objective};
use crate::error::{ensure_len, Error, Result};
use crate::parallel::Execution;
use crate::problem::{ControlSequence, Dims, InputBounds, ProblemSpec};
use crate::weighting::{build_weighting, BlockWeighting};

/// Sampling covariance `Σ_U`.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplingCovariance {
    /// `I_H ⊗ diag(σ²)` with one standard deviation per input component.
    StageDiagonal(Vec<f64>),
    /// Full `Hm × Hm` matrix; must be symmetric positive semi-definite.
    Full(DMatrix<f64>),
}

/// Square-root factor `L` with `Σ_U = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplingFactor {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl SamplingCovariance {
    pub fn factor(&self, dims: Dims) -> Result<SamplingFactor> {
        let hm = dims.controls_len();
        match self {
            SamplingCovariance::StageDiagonal(std) => {
                ensure_len("sampling std", dims.input, std.len())?;
                if std.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                    return Err(Error::NotPositiveDefinite { name: "Σ_U" });
                }
                Ok(SamplingFactor::Diagonal(
                    (0..hm).map(|j| std[j % dims.input]).collect(),
                ))
            }
            SamplingCovariance::Full(cov) => {
                ensure_len("sampling covariance", hm, cov.nrows())?;
                ensure_len("sampling covariance", hm, cov.ncols())?;
                psd_factor(cov).map(SamplingFactor::Dense)
            }
        }
    }
}

fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = cov.amax().max(1.0);
    if (cov - cov.transpose()).amax() > 1e-10 * scale {
        return Err(Error::NotPositiveDefinite { name: "Σ_U" });
    }
    if let Some(c) = cov.clone().cholesky() {
        return Ok(c.unpack());
    }
    // Singular PSD matrices still factor through the eigendecomposition.
    let eig = cov.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|l| *l < -1e-10 * scale) {
        return Err(Error::NotPositiveDefinite { name: "Σ_U" });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EkiConfig {
    /// Ensemble size `N ≥ 2`.
    pub ensemble_size: usize,
    /// Inner iterations `M + 1`.
    pub iterations: usize,
    pub sampling: SamplingCovariance,
    pub beta0: f64,
    pub gamma: f64,
    pub seed: u64,
    /// Woodbury gain is used when `d > woodbury_threshold · N`.
    pub woodbury_threshold: usize,
    pub execution: Execution,
    /// Keep the updated particle cloud of every inner iteration in the diagnostics.
    pub record_particles: bool,
}

impl EkiConfig {
    pub fn new(ensemble_size: usize, iterations: usize, sampling: SamplingCovariance) -> Self {
        EkiConfig {
            ensemble_size,
            iterations,
            sampling,
            beta0: 1.0,
            gamma: 0.5,
            seed: 0,
            woodbury_threshold: 4,
            execution: Execution::default(),
            record_particles: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size < 2 {
            return Err(Error::param("ensemble_size", "at least two particles are required"));
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
        Ok(())
    }

    /// Annealing temperature `β_k = β₀ e^{−γk}`.
    pub fn beta(&self, k: usize) -> f64 {
        self.beta0 * (-self.gamma * k as f64).exp()
    }
}

/// Offsets of the three residual blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResidualLayout {
    pub controls: Range<usize>,
    pub states: Range<usize>,
    pub constraints: Range<usize>,
}

impl ResidualLayout {
    pub fn new(dims: Dims) -> Self {
        let a = dims.controls_len();
        let b = a + dims.states_len();
        let c = b + dims.stacked_constraints_len();
        ResidualLayout {
            controls: 0..a,
            states: a..b,
            constraints: b..c,
        }
    }

    pub fn len(&self) -> usize {
        self.constraints.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws `U_i = mean + ε_i`, `ε_i ~ N(0, β Σ_U)`, one column per particle,
/// then clamps to the input box.
pub fn sample_ensemble<R: Rng + ?Sized>(
    mean: &ControlSequence,
    factor: &SamplingFactor,
    size: usize,
    beta: f64,
    bounds: Option<&InputBounds>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::param("beta", "temperature must be nonnegative"));
    }
    let hm = mean.as_slice().len();
    let scale = beta.sqrt();
    let mut out = DMatrix::zeros(hm, size);
    let mut z = DVector::zeros(hm);
    for i in 0..size {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let col = &mut out.as_mut_slice()[i * hm..(i + 1) * hm];
        match factor {
            SamplingFactor::Diagonal(std) => {
                ensure_len("sampling factor", hm, std.len())?;
                for j in 0..hm {
                    col[j] = mean.as_slice()[j] + scale * std[j] * z[j];
                }
            }
            SamplingFactor::Dense(l) => {
                ensure_len("sampling factor", hm, l.nrows())?;
                let eps = l * &z;
                for j in 0..hm {
                    col[j] = mean.as_slice()[j] + scale * eps[j];
                }
            }
        }
        if let Some(b) = bounds {
            b.clamp(col);
        }
    }
    Ok(out)
}

/// Assembles one residual column per particle (one rollout each).
pub fn compute_residuals(
    spec: &ProblemSpec,
    x0: &[f64],
    particles: &DMatrix<f64>,
    slack: &[f64],
    dual: &[f64],
    execution: Execution,
) -> Result<DMatrix<f64>> {
    let dims = spec.dims();
    let layout = ResidualLayout::new(dims);
    let hm = dims.controls_len();
    ensure_len("particle length", hm, particles.nrows())?;
    ensure_len("slack", dims.stacked_constraints_len(), slack.len())?;
    ensure_len("dual", dims.stacked_constraints_len(), dual.len())?;
    ensure_len("initial state", dims.state, x0.len())?;
    let d = layout.len();
    let all = particles.as_slice();
    let columns = execution.try_map(particles.ncols(), |i| {
        let u = &all[i * hm..(i + 1) * hm];
        residual_column(spec, &layout, x0, u, slack, dual).map_err(|e| Error::Particle {
            particle: i,
            source: Box::new(e),
        })
    })?;
    let mut flat = Vec::with_capacity(d * columns.len());
    for c in columns {
        flat.extend_from_slice(&c);
    }
    Ok(DMatrix::from_vec(d, particles.ncols(), flat))
}

fn residual_column(
    spec: &ProblemSpec,
    layout: &ResidualLayout,
    x0: &[f64],
    u: &[f64],
    slack: &[f64],
    dual: &[f64],
) -> Result<Vec<f64>> {
    let mut c = vec![0.0; layout.len()];
    c[layout.controls.clone()].copy_from_slice(u);
    let (head, cons) = c.split_at_mut(layout.constraints.start);
    let states = &mut head[layout.states.clone()];
    spec.rollout_into(x0, u, states)?;
    spec.constraints_into(states, u, cons);
    for (j, g) in cons.iter_mut().enumerate() {
        *g += slack[j] + dual[j];
    }
    for (x, z) in states.iter_mut().zip(spec.reference()) {
        *x -= z;
    }
    Ok(c)
}

/// Ensemble means and anomalies; the covariances are formed on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStatistics {
    pub mean_controls: DVector<f64>,
    pub mean_residual: DVector<f64>,
    /// `ΔU`, `Hm × N`.
    pub control_anomalies: DMatrix<f64>,
    /// `ΔC`, `d × N`.
    pub residual_anomalies: DMatrix<f64>,
}

impl EnsembleStatistics {
    pub fn size(&self) -> usize {
        self.control_anomalies.ncols()
    }

    /// `P_UC = ΔU ΔCᵀ / (N − 1)`.
    pub fn cross_covariance(&self) -> DMatrix<f64> {
        &self.control_anomalies * self.residual_anomalies.transpose() / (self.size() - 1) as f64
    }

    /// `P_CC = ΔC ΔCᵀ / (N − 1)`.
    pub fn residual_covariance(&self) -> DMatrix<f64> {
        &self.residual_anomalies * self.residual_anomalies.transpose() / (self.size() - 1) as f64
    }
}

// Mean is accumulated relative to the first column so that a collapsed
// ensemble yields exactly zero anomalies.
fn anomalies(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let first = m.column(0).into_owned();
    let mut shift = DVector::zeros(m.nrows());
    for col in m.column_iter() {
        shift += col - &first;
    }
    let mean = first + shift / m.ncols() as f64;
    let mut delta = m.clone();
    for mut col in delta.column_iter_mut() {
        col -= &mean;
    }
    (mean, delta)
}

pub fn ensemble_statistics(particles: &DMatrix<f64>, residuals: &DMatrix<f64>) -> Result<EnsembleStatistics> {
    ensure_len("residual columns", particles.ncols(), residuals.ncols())?;
    if particles.ncols() < 2 {
        return Err(Error::param("ensemble_size", "at least two particles are required"));
    }
    let (mean_controls, control_anomalies) = anomalies(particles);
    let (mean_residual, residual_anomalies) = anomalies(residuals);
    Ok(EnsembleStatistics {
        mean_controls,
        mean_residual,
        control_anomalies,
        residual_anomalies,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainPath {
    Direct,
    Woodbury,
}

/// `K = P_UC (P_CC + Q̂)⁻¹` through a Cholesky solve on the dense sum.
pub fn gain_direct(p_uc: &DMatrix<f64>, p_cc: &DMatrix<f64>, qhat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ensure_len("P_CC", p_uc.ncols(), p_cc.nrows())?;
    ensure_len("Q̂", p_cc.nrows(), qhat.nrows())?;
    let sum = p_cc + qhat;
    solve_right(&sum, p_uc)
}

fn solve_right(sum: &DMatrix<f64>, p_uc: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = sum
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { name: "P_CC + Q̂" })?;
    // (P_CC + Q̂) is symmetric, so Kᵀ = (P_CC + Q̂)⁻¹ P_UCᵀ.
    Ok(chol.solve(&p_uc.transpose()).transpose())
}

/// Same gain through the matrix inversion lemma, inverting only an `N × N` matrix:
/// `K = ΔU (I − A W) ΔCᵀ Q̂⁻¹ / (N − 1)` with `A = ΔCᵀ Q̂⁻¹ ΔC` and
/// `W = ((N − 1) I + A)⁻¹`.
pub fn gain_woodbury(
    control_anomalies: &DMatrix<f64>,
    residual_anomalies: &DMatrix<f64>,
    weighting: &BlockWeighting,
) -> Result<DMatrix<f64>> {
    let n = residual_anomalies.ncols();
    ensure_len("anomaly columns", control_anomalies.ncols(), n)?;
    let scaled = weighting.apply_precision(residual_anomalies)?;
    let a = residual_anomalies.transpose() * &scaled;
    let inner = DMatrix::identity(n, n) * (n - 1) as f64 + &a;
    let w = inner
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { name: "(N-1)I + ΔCᵀQ̂⁻¹ΔC" })?
        .inverse();
    let core = DMatrix::identity(n, n) - a * w;
    Ok(control_anomalies * core * scaled.transpose() / (n - 1) as f64)
}

/// Picks the gain path by size: Woodbury once `d > threshold · N`.
pub fn kalman_gain(
    stats: &EnsembleStatistics,
    weighting: &BlockWeighting,
    woodbury_threshold: usize,
) -> Result<(DMatrix<f64>, GainPath)> {
    let d = stats.residual_anomalies.nrows();
    ensure_len("Q̂ dimension", d, weighting.dim())?;
    if d > woodbury_threshold.saturating_mul(stats.size()) {
        let k = gain_woodbury(
            &stats.control_anomalies,
            &stats.residual_anomalies,
            weighting,
        )?;
        Ok((k, GainPath::Woodbury))
    } else {
        let mut sum = stats.residual_covariance();
        weighting.add_to(&mut sum);
        Ok((solve_right(&sum, &stats.cross_covariance())?, GainPath::Direct))
    }
}

/// One EKI step on a given particle cloud.
#[derive(Debug, Clone)]
pub struct EkiStep {
    pub residuals: DMatrix<f64>,
    pub stats: EnsembleStatistics,
    /// The single gain applied to every particle.
    pub gain: DMatrix<f64>,
    pub path: GainPath,
    /// Particles after `U_i − K C_i` and clamping.
    pub updated: DMatrix<f64>,
}

pub fn eki_iteration(
    spec: &ProblemSpec,
    x0: &[f64],
    particles: &DMatrix<f64>,
    slack: &[f64],
    dual: &[f64],
    weighting: &BlockWeighting,
    cfg: &EkiConfig,
) -> Result<EkiStep> {
    let residuals = compute_residuals(spec, x0, particles, slack, dual, cfg.execution)?;
    let stats = ensemble_statistics(particles, &residuals)?;
    let (gain, path) = kalman_gain(&stats, weighting, cfg.woodbury_threshold)?;
    let mut updated = particles - &gain * &residuals;
    if let Some(b) = spec.bounds() {
        b.clamp(updated.as_mut_slice());
    }
    Ok(EkiStep {
        residuals,
        stats,
        gain,
        path,
        updated,
    })
}

/// Per-inner-iteration record.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerDiagnostics {
    pub iteration: usize,
    pub beta: f64,
    /// `Φ` at the updated mean.
    pub objective: f64,
    pub max_violation: f64,
    /// Root-mean-square distance of the updated particles from their mean.
    pub spread: f64,
    pub path: GainPath,
    pub particles: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct EkiOutcome {
    pub mean: ControlSequence,
    pub particles: DMatrix<f64>,
    pub objective: Objective,
    pub diagnostics: Vec<InnerDiagnostics>,
}

/// Runs `k = 0..=M` annealed EKI iterations and returns the final mean.
#[allow(clippy::too_many_arguments)]
pub fn eki_inner_loop<R: Rng + ?Sized>(
    spec: &ProblemSpec,
    x0: &[f64],
    mean0: &ControlSequence,
    slack: &[f64],
    dual: &[f64],
    rho: f64,
    cfg: &EkiConfig,
    rng: &mut R,
) -> Result<EkiOutcome> {
    cfg.validate()?;
    let dims = spec.dims();
    ensure_len("warm-start mean", dims.controls_len(), mean0.as_slice().len())?;
    if slack.iter().any(|s| *s < 0.0) {
        return Err(Error::param("slack", "must be nonnegative"));
    }
    let weighting = build_weighting(spec, rho)?;
    let factor = cfg.sampling.factor(dims)?;
    let mut mean = mean0.clone();
    let mut diagnostics = Vec::with_capacity(cfg.iterations);
    let mut particles = DMatrix::zeros(0, 0);
    let mut objective = None;

    for k in 0..cfg.iterations {
        let beta = cfg.beta(k);
        let sampled = sample_ensemble(&mean, &factor, cfg.ensemble_size, beta, spec.bounds(), rng)?;
        let step = eki_iteration(spec, x0, &sampled, slack, dual, &weighting, cfg)?;
        let new_mean = step.updated.column_mean();
        if new_mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::EnsembleDiverged { iteration: k });
        }
        mean = ControlSequence::new(new_mean.as_slice().to_vec(), dims.input)?;
        let obj = primal_objective(spec, x0, &mean, slack, dual, rho)?;
        let spread = rms_spread(&step.updated, &new_mean);
        diagnostics.push(InnerDiagnostics {
            iteration: k,
            beta,
            objective: obj.value,
            max_violation: obj.max_violation,
            spread,
            path: step.path,
            particles: cfg.record_particles.then(|| step.updated.clone()),
        });
        objective = Some(obj);
        particles = step.updated;
    }

    Ok(EkiOutcome {
        mean,
        particles,
        objective: objective.expect("at least one inner iteration"),
        diagnostics,
    })
}

fn rms_spread(particles: &DMatrix<f64>, mean: &DVector<f64>) -> f64 {
    let n = particles.ncols() as f64;
    let total: f64 = particles
        .column_iter()
        .map(|c| (c - mean).norm_squared())
        .sum();
    (total / n).sqrt()
}
