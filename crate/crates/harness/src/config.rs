//! Run configuration: a TOML file layered over per-benchmark defaults.
//!
//! Every key of the resolved configuration has a default, so a file only
//! needs `benchmark = "..."`. Keys that do not exist in the defaults are
//! rejected by their full dotted path.

use std::fmt;
use std::path::{Path, PathBuf};

use admm_eki::admm::{AdmmConfig, Tolerances};
use admm_eki::benchmarks::racing::{BicycleParams, RacingCost, TrackParams};
use admm_eki::benchmarks::rastrigin::RastriginSettings;
use admm_eki::eki::{EkiConfig, SamplingCovariance};
use admm_eki::mppi::MppiConfig;
use admm_eki::parallel::Execution;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    Rastrigin,
    Racing,
}

impl Benchmark {
    pub fn as_str(self) -> &'static str {
        match self {
            Benchmark::Rastrigin => "rastrigin",
            Benchmark::Racing => "racing",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Controller {
    AdmmEki,
    MppiBaseline,
}

impl Controller {
    pub fn as_str(self) -> &'static str {
        match self {
            Controller::AdmmEki => "admm-eki",
            Controller::MppiBaseline => "mppi-baseline",
        }
    }
}

impl fmt::Display for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmmSection {
    /// Outer iterations `L + 1`.
    pub outer_iterations: usize,
    pub tau: f64,
    pub rho0: f64,
    pub early_stop: bool,
    pub primal_tolerance: f64,
    pub dual_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EkiSection {
    pub ensemble_size: usize,
    /// Inner iterations `M + 1`.
    pub inner_iterations: usize,
    pub beta0: f64,
    pub gamma: f64,
    pub woodbury_threshold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MppiSection {
    pub samples: usize,
    pub temperature: f64,
    pub iterations: usize,
    pub beta0: f64,
    pub gamma: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RastriginSection {
    pub prior_mean: [f64; 2],
    /// Diagonal of the prior covariance, also used as `Σ_U`.
    pub prior_variance: [f64; 2],
    pub input_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RacingSection {
    pub horizon: usize,
    pub initial_speed: f64,
    pub max_steps: usize,
    /// Per-stage sampling standard deviations for `(steering, throttle)`.
    pub sampling_std: [f64; 2],
    pub track: TrackParams,
    pub vehicle: BicycleParams,
    pub cost: RacingCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: Benchmark,
    pub controller: Controller,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub plot: bool,
    /// Adds wall-clock solve times to the outputs; they are not reproducible.
    pub timings: bool,
    pub execution: Execution,
    pub admm: AdmmSection,
    pub eki: EkiSection,
    pub mppi: MppiSection,
    pub rastrigin: RastriginSection,
    pub racing: RacingSection,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid TOML: {0}")]
    Syntax(String),
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("{0}")]
    Schema(String),
    #[error("`{key}`: {reason}")]
    OutOfRange { key: String, reason: String },
}

fn out_of_range(key: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::OutOfRange {
        key: key.into(),
        reason: reason.into(),
    }
}

impl RunConfig {
    pub fn defaults(benchmark: Benchmark) -> Self {
        let rastrigin = RastriginSettings::default();
        let (admm, eki, mppi) = match benchmark {
            Benchmark::Rastrigin => (
                AdmmSection {
                    outer_iterations: rastrigin.outer_iterations,
                    tau: rastrigin.tau,
                    rho0: rastrigin.rho0,
                    early_stop: false,
                    primal_tolerance: 1e-3,
                    dual_tolerance: 1e-3,
                },
                EkiSection {
                    ensemble_size: rastrigin.ensemble_size,
                    inner_iterations: rastrigin.inner_iterations,
                    beta0: rastrigin.beta0,
                    gamma: rastrigin.gamma,
                    woodbury_threshold: rastrigin.woodbury_threshold,
                },
                MppiSection {
                    samples: rastrigin.ensemble_size,
                    temperature: 1.0,
                    iterations: rastrigin.inner_iterations,
                    beta0: rastrigin.beta0,
                    gamma: rastrigin.gamma,
                    penalty: 100.0,
                },
            ),
            Benchmark::Racing => (
                AdmmSection {
                    outer_iterations: 3,
                    tau: 2.0,
                    rho0: 1.0,
                    early_stop: false,
                    primal_tolerance: 1e-3,
                    dual_tolerance: 1e-3,
                },
                EkiSection {
                    ensemble_size: 64,
                    inner_iterations: 4,
                    beta0: 1.0,
                    gamma: 0.5,
                    woodbury_threshold: 4,
                },
                MppiSection {
                    samples: 64,
                    temperature: 1.0,
                    iterations: 4,
                    beta0: 1.0,
                    gamma: 0.5,
                    penalty: 1000.0,
                },
            ),
        };
        RunConfig {
            benchmark,
            controller: Controller::AdmmEki,
            seed: 0,
            output_dir: PathBuf::from(format!("out/{benchmark}")),
            plot: false,
            timings: false,
            execution: Execution::default(),
            admm,
            eki,
            mppi,
            rastrigin: RastriginSection {
                prior_mean: rastrigin.prior_mean,
                prior_variance: rastrigin.prior_variance,
                input_weight: rastrigin.input_weight,
            },
            racing: RacingSection {
                horizon: 20,
                initial_speed: 0.0,
                max_steps: 1500,
                sampling_std: [0.1, 2.0],
                track: TrackParams::default(),
                vehicle: BicycleParams::default(),
                cost: RacingCost::default(),
            },
        }
    }

    /// The defaults for `benchmark` as a complete TOML document.
    pub fn defaults_toml(benchmark: Benchmark) -> String {
        toml::to_string_pretty(&RunConfig::defaults(benchmark)).expect("defaults serialize")
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let user: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        let benchmark = match user.get("benchmark") {
            None => return Err(ConfigError::Missing("benchmark")),
            Some(v) => Benchmark::deserialize(v.clone())
                .map_err(|_| out_of_range("benchmark", "expected \"rastrigin\" or \"racing\""))?,
        };
        let mut merged = Table::try_from(RunConfig::defaults(benchmark)).expect("defaults serialize");
        merge(&mut merged, user, "")?;
        let cfg = RunConfig::deserialize(Value::Table(merged)).map_err(|e| ConfigError::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every numeric parameter against the solver preconditions.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(out_of_range(key, format!("must be positive and finite, got {v}")))
            }
        };
        let nonneg = |key: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(out_of_range(key, format!("must be nonnegative and finite, got {v}")))
            }
        };
        let at_least = |key: &str, v: usize, min: usize| {
            if v >= min {
                Ok(())
            } else {
                Err(out_of_range(key, format!("must be at least {min}, got {v}")))
            }
        };

        let a = &self.admm;
        at_least("admm.outer_iterations", a.outer_iterations, 1)?;
        if !(a.tau >= 1.0 && a.tau.is_finite()) {
            return Err(out_of_range("admm.tau", format!("penalty growth must satisfy tau >= 1, got {}", a.tau)));
        }
        positive("admm.rho0", a.rho0)?;
        positive("admm.primal_tolerance", a.primal_tolerance)?;
        positive("admm.dual_tolerance", a.dual_tolerance)?;

        let e = &self.eki;
        at_least("eki.ensemble_size", e.ensemble_size, 2)?;
        at_least("eki.inner_iterations", e.inner_iterations, 1)?;
        positive("eki.beta0", e.beta0)?;
        nonneg("eki.gamma", e.gamma)?;

        let m = &self.mppi;
        at_least("mppi.samples", m.samples, 1)?;
        positive("mppi.temperature", m.temperature)?;
        at_least("mppi.iterations", m.iterations, 1)?;
        positive("mppi.beta0", m.beta0)?;
        nonneg("mppi.gamma", m.gamma)?;
        nonneg("mppi.penalty", m.penalty)?;

        let r = &self.rastrigin;
        for (i, v) in r.prior_mean.iter().enumerate() {
            if !v.is_finite() {
                return Err(out_of_range(format!("rastrigin.prior_mean[{i}]"), "must be finite"));
            }
        }
        for (i, v) in r.prior_variance.iter().enumerate() {
            positive(&format!("rastrigin.prior_variance[{i}]"), *v)?;
        }
        positive("rastrigin.input_weight", r.input_weight)?;

        let c = &self.racing;
        at_least("racing.horizon", c.horizon, 1)?;
        nonneg("racing.initial_speed", c.initial_speed)?;
        at_least("racing.max_steps", c.max_steps, 1)?;
        for (i, v) in c.sampling_std.iter().enumerate() {
            positive(&format!("racing.sampling_std[{i}]"), *v)?;
        }
        positive("racing.vehicle.wheelbase", c.vehicle.wheelbase)?;
        positive("racing.vehicle.dt", c.vehicle.dt)?;
        positive("racing.vehicle.max_accel", c.vehicle.max_accel)?;
        if !(c.vehicle.max_steer_deg > 0.0 && c.vehicle.max_steer_deg < 90.0) {
            return Err(out_of_range("racing.vehicle.max_steer_deg", "must lie in (0, 90)"));
        }
        for (name, values) in [
            ("state", &c.cost.state[..]),
            ("terminal", &c.cost.terminal[..]),
            ("input", &c.cost.input[..]),
        ] {
            for (i, v) in values.iter().enumerate() {
                positive(&format!("racing.cost.{name}[{i}]"), *v)?;
            }
        }
        c.track.validate().map_err(|e| match e {
            admm_eki::Error::InvalidParameter { name, reason } => out_of_range(format!("racing.track.{name}"), reason),
            other => out_of_range("racing.track", other.to_string()),
        })?;

        // Backstop: the solver's own checks.
        let core = |e: admm_eki::Error| out_of_range("solver", e.to_string());
        self.admm_config().validate().map_err(core)?;
        self.eki_config().validate().map_err(core)?;
        self.mppi_config().validate().map_err(core)?;
        Ok(())
    }

    pub fn sampling(&self) -> SamplingCovariance {
        match self.benchmark {
            Benchmark::Rastrigin => SamplingCovariance::StageDiagonal(
                self.rastrigin.prior_variance.iter().map(|v| v.sqrt()).collect(),
            ),
            Benchmark::Racing => SamplingCovariance::StageDiagonal(self.racing.sampling_std.to_vec()),
        }
    }

    pub fn admm_config(&self) -> AdmmConfig {
        AdmmConfig {
            outer_iterations: self.admm.outer_iterations,
            tau: self.admm.tau,
            rho0: self.admm.rho0,
            early_stop: self.admm.early_stop.then_some(Tolerances {
                primal: self.admm.primal_tolerance,
                dual: self.admm.dual_tolerance,
            }),
        }
    }

    pub fn eki_config(&self) -> EkiConfig {
        EkiConfig {
            ensemble_size: self.eki.ensemble_size,
            iterations: self.eki.inner_iterations,
            sampling: self.sampling(),
            beta0: self.eki.beta0,
            gamma: self.eki.gamma,
            seed: self.seed,
            woodbury_threshold: self.eki.woodbury_threshold,
            execution: self.execution,
            record_particles: self.benchmark == Benchmark::Rastrigin,
        }
    }

    pub fn mppi_config(&self) -> MppiConfig {
        MppiConfig {
            samples: self.mppi.samples,
            temperature: self.mppi.temperature,
            iterations: self.mppi.iterations,
            sampling: self.sampling(),
            beta0: self.mppi.beta0,
            gamma: self.mppi.gamma,
            penalty: self.mppi.penalty,
            execution: self.execution,
        }
    }

    pub fn rastrigin_settings(&self) -> RastriginSettings {
        RastriginSettings {
            ensemble_size: self.eki.ensemble_size,
            outer_iterations: self.admm.outer_iterations,
            inner_iterations: self.eki.inner_iterations,
            prior_mean: self.rastrigin.prior_mean,
            prior_variance: self.rastrigin.prior_variance,
            beta0: self.eki.beta0,
            gamma: self.eki.gamma,
            rho0: self.admm.rho0,
            tau: self.admm.tau,
            input_weight: self.rastrigin.input_weight,
            woodbury_threshold: self.eki.woodbury_threshold,
            execution: self.execution,
        }
    }
}

fn merge(base: &mut Table, user: Table, prefix: &str) -> Result<(), ConfigError> {
    for (key, value) in user {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match (base.get_mut(&key), value) {
            (None, _) => return Err(ConfigError::UnknownKey(path)),
            (Some(Value::Table(b)), Value::Table(u)) => merge(b, u, &path)?,
            (Some(slot), v) => *slot = v,
        }
    }
    Ok(())
}
