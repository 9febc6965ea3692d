//! Runs configured experiments and writes their artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use admm_eki::benchmarks::racing::{build_race_environment, RaceEnvironment, RaceSim};
use admm_eki::benchmarks::rastrigin::{
    disk_penalty, rastrigin_misfit, run_rastrigin_demo, DemoResult,
};
use admm_eki::mpc::{run_episode, AdmmEkiPlanner, MpcSession, MppiPlanner, RunRecord, Summary};
use admm_eki::mppi::mppi_update;
use admm_eki::problem::ControlSequence;
use admm_eki::seeding::{stream_rng, Stream};
use serde::Serialize;
use thiserror::Error;

use crate::config::{Benchmark, ConfigError, Controller, RunConfig};
use crate::plot;

/// Best feasible local minimizer of the constrained Rastrigin problem.
pub const RASTRIGIN_TARGET: [f64; 2] = [-2.0, 0.0];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("solver failed: {0}")]
    Solver(#[from] admm_eki::Error),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{0}")]
    Mismatch(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Solver(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    Collision,
    Incomplete,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Ok => 0,
            RunStatus::Collision => 3,
            RunStatus::Incomplete => 4,
        }
    }
}

/// Racing summary columns, in order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub controller: String,
    pub mean_speed: f64,
    pub max_speed: f64,
    pub mean_error: f64,
    pub max_error: f64,
    pub total_steps: usize,
}

impl From<&Summary> for SummaryRow {
    fn from(s: &Summary) -> Self {
        SummaryRow {
            controller: s.controller.clone(),
            mean_speed: s.mean_speed,
            max_speed: s.max_speed,
            mean_error: s.mean_error,
            max_error: s.max_error,
            total_steps: s.total_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatusRow {
    pub controller: String,
    pub collisions: usize,
    pub completed: bool,
    pub environment_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RastriginRow {
    pub controller: String,
    pub x1: f64,
    pub x2: f64,
    pub misfit: f64,
    pub constraint: f64,
    pub distance_to_target: f64,
}

#[derive(Debug, Clone)]
pub struct RacingRun {
    pub record: RunRecord,
    pub summary: Summary,
    pub environment_hash: String,
}

impl RacingRun {
    pub fn status(&self) -> RunStatus {
        if self.summary.collisions > 0 || self.record.terminated {
            RunStatus::Collision
        } else if !self.summary.completed {
            RunStatus::Incomplete
        } else {
            RunStatus::Ok
        }
    }
}

#[derive(Debug, Clone)]
pub struct RastriginRun {
    pub row: RastriginRow,
    /// Present for ADMM-EKI runs.
    pub demo: Option<DemoResult>,
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Rastrigin(RastriginRun),
    Racing(RacingRun),
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub outcome: Outcome,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    pub fn status(&self) -> RunStatus {
        match &self.outcome {
            Outcome::Rastrigin(_) => RunStatus::Ok,
            Outcome::Racing(r) => r.status(),
        }
    }
}

pub fn build_environment(cfg: &RunConfig) -> Result<RaceEnvironment> {
    Ok(build_race_environment(
        cfg.seed,
        &cfg.racing.track,
        &cfg.racing.vehicle,
        cfg.racing.horizon,
    )?)
}

/// Runs one racing episode on `env` without touching the file system.
pub fn run_racing(cfg: &RunConfig, env: Arc<RaceEnvironment>) -> Result<RacingRun> {
    let spec = env.problem_spec(&cfg.racing.cost)?;
    let mut sim = RaceSim::new(env.clone(), cfg.racing.initial_speed);
    let max_steps = cfg.racing.max_steps;
    let record = match cfg.controller {
        Controller::AdmmEki => {
            let planner = AdmmEkiPlanner::new(cfg.admm_config(), cfg.eki_config())?;
            run_episode(&mut MpcSession::new(spec, planner, cfg.seed), &mut sim, max_steps)?
        }
        Controller::MppiBaseline => {
            let planner = MppiPlanner::new(cfg.mppi_config())?;
            run_episode(&mut MpcSession::new(spec, planner, cfg.seed), &mut sim, max_steps)?
        }
    };
    let summary = record.summary();
    Ok(RacingRun {
        record,
        summary,
        environment_hash: env.hash(),
    })
}

pub fn run_rastrigin(cfg: &RunConfig) -> Result<RastriginRun> {
    let settings = cfg.rastrigin_settings();
    let (x, demo) = match cfg.controller {
        Controller::AdmmEki => {
            let demo = run_rastrigin_demo(cfg.seed, &settings)?;
            (demo.final_mean, Some(demo))
        }
        Controller::MppiBaseline => {
            let spec = settings.problem_spec()?;
            let prior = ControlSequence::new(settings.prior_mean.to_vec(), 2)?;
            let mut rng = stream_rng(cfg.seed, Stream::Sampling);
            let out = mppi_update(&spec, &[0.0], &prior, &cfg.mppi_config(), &mut rng)?;
            let u = out.mean.as_slice();
            ([u[0], u[1]], None)
        }
    };
    let d = ((x[0] - RASTRIGIN_TARGET[0]).powi(2) + (x[1] - RASTRIGIN_TARGET[1]).powi(2)).sqrt();
    Ok(RastriginRun {
        row: RastriginRow {
            controller: cfg.controller.to_string(),
            x1: x[0],
            x2: x[1],
            misfit: rastrigin_misfit(x),
            constraint: disk_penalty(x),
            distance_to_target: d,
        },
        demo,
    })
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Writer {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
        self.files.push(path);
        Ok(())
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let path = self.dir.join(name);
        let err = |source| HarnessError::Csv {
            path: path.clone(),
            source,
        };
        let mut w = csv::Writer::from_path(&path).map_err(err)?;
        for r in rows {
            w.serialize(r).map_err(err)?;
        }
        w.flush().map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
        self.files.push(path);
        Ok(())
    }
}

#[derive(Serialize)]
struct OuterRow {
    outer: usize,
    objective: f64,
    max_violation: f64,
    rho: f64,
    primal_residual: f64,
    dual_residual: f64,
}

#[derive(Serialize)]
struct InnerRow {
    outer: usize,
    inner: usize,
    beta: f64,
    objective: f64,
    max_violation: f64,
    spread: f64,
}

#[derive(Serialize)]
struct ParticleRow {
    outer: usize,
    inner: usize,
    particle: usize,
    x1: f64,
    x2: f64,
}

#[derive(Serialize)]
struct EpisodeRow {
    step: usize,
    x: f64,
    y: f64,
    heading: f64,
    speed: f64,
    steering: f64,
    throttle: f64,
    tracking_error: f64,
    clearance: f64,
    objective: f64,
    max_violation: f64,
}

#[derive(Serialize)]
struct TimingRow {
    step: usize,
    solve_seconds: f64,
}

fn write_rastrigin(w: &mut Writer, cfg: &RunConfig, run: &RastriginRun) -> Result<()> {
    w.csv("summary.csv", std::slice::from_ref(&run.row))?;
    if let Some(demo) = &run.demo {
        let outer: Vec<_> = demo
            .trace
            .iter()
            .map(|t| OuterRow {
                outer: t.iteration,
                objective: t.objective,
                max_violation: t.max_violation,
                rho: t.rho,
                primal_residual: t.primal_residual,
                dual_residual: t.dual_residual,
            })
            .collect();
        w.csv("outer_trace.csv", &outer)?;
        let mut particles = Vec::new();
        let mut inner = Vec::new();
        for s in &demo.snapshots {
            for (i, p) in s.particles.iter().enumerate() {
                particles.push(ParticleRow {
                    outer: s.outer,
                    inner: s.inner,
                    particle: i,
                    x1: p[0],
                    x2: p[1],
                });
            }
        }
        for s in &demo.snapshots {
            inner.push(InnerRow {
                outer: s.outer,
                inner: s.inner,
                beta: s.beta,
                objective: s.objective,
                max_violation: s.max_violation,
                spread: s.spread,
            });
        }
        w.csv("inner_trace.csv", &inner)?;
        w.csv("snapshots.csv", &particles)?;
        if cfg.plot {
            w.text("particles.svg", &plot::particle_panels(&demo.snapshots))?;
        }
    }
    Ok(())
}

fn write_racing(w: &mut Writer, cfg: &RunConfig, env: &RaceEnvironment, run: &RacingRun) -> Result<()> {
    let rows: Vec<_> = run
        .record
        .rows
        .iter()
        .map(|r| EpisodeRow {
            step: r.step,
            x: r.state[0],
            y: r.state[1],
            heading: r.state[2],
            speed: r.speed,
            steering: r.input[0],
            throttle: r.input[1],
            tracking_error: r.tracking_error,
            clearance: r.clearance,
            objective: r.objective,
            max_violation: r.max_violation,
        })
        .collect();
    w.csv("episode.csv", &rows)?;
    w.csv("summary.csv", &[SummaryRow::from(&run.summary)])?;
    w.csv("status.csv", &[status_row(run)])?;
    if cfg.timings {
        let t: Vec<_> = run
            .record
            .rows
            .iter()
            .map(|r| TimingRow {
                step: r.step,
                solve_seconds: r.solve_seconds,
            })
            .collect();
        w.csv("timings.csv", &t)?;
    }
    if cfg.plot {
        let traj = trajectory(&run.record);
        w.text("track.svg", &plot::track_overview(env, &[(cfg.controller.as_str(), traj)]))?;
    }
    Ok(())
}

fn status_row(run: &RacingRun) -> StatusRow {
    StatusRow {
        controller: run.summary.controller.clone(),
        collisions: run.summary.collisions,
        completed: run.summary.completed,
        environment_hash: run.environment_hash.clone(),
    }
}

fn trajectory(record: &RunRecord) -> Vec<[f64; 2]> {
    record.rows.iter().map(|r| [r.state[0], r.state[1]]).collect()
}

/// Runs `cfg` and writes everything to `cfg.output_dir`.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let mut w = Writer::new(&cfg.output_dir)?;
    w.text("config.toml", &cfg.to_toml())?;
    let outcome = match cfg.benchmark {
        Benchmark::Rastrigin => {
            let run = run_rastrigin(cfg)?;
            write_rastrigin(&mut w, cfg, &run)?;
            Outcome::Rastrigin(run)
        }
        Benchmark::Racing => {
            let env = Arc::new(build_environment(cfg)?);
            w.text("environment.json", &env.to_json())?;
            let run = run_racing(cfg, env.clone())?;
            write_racing(&mut w, cfg, &env, &run)?;
            Outcome::Racing(run)
        }
    };
    Ok(RunReport {
        outcome,
        files: w.files,
    })
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub labels: [String; 2],
    pub reports: [RunReport; 2],
    pub environment_hash: Option<String>,
}

impl CompareReport {
    /// Worst status of the two runs.
    pub fn status(&self) -> RunStatus {
        let s = [self.reports[0].status(), self.reports[1].status()];
        if s.contains(&RunStatus::Collision) {
            RunStatus::Collision
        } else if s.contains(&RunStatus::Incomplete) {
            RunStatus::Incomplete
        } else {
            RunStatus::Ok
        }
    }
}

/// Runs two configurations on the same benchmark instance and writes a merged table.
pub fn compare(a: &RunConfig, b: &RunConfig, out: &Path) -> Result<CompareReport> {
    a.validate()?;
    b.validate()?;
    if a.benchmark != b.benchmark {
        return Err(HarnessError::Mismatch(format!(
            "benchmarks differ: {} vs {}",
            a.benchmark, b.benchmark
        )));
    }
    if a.seed != b.seed {
        return Err(HarnessError::Mismatch(format!("seeds differ: {} vs {}", a.seed, b.seed)));
    }
    let labels = if a.controller == b.controller {
        [format!("a-{}", a.controller), format!("b-{}", b.controller)]
    } else {
        [a.controller.to_string(), b.controller.to_string()]
    };
    let mut a = a.clone();
    let mut b = b.clone();
    a.output_dir = out.join(&labels[0]);
    b.output_dir = out.join(&labels[1]);

    let mut w = Writer::new(out)?;
    let mut environment_hash = None;
    if a.benchmark == Benchmark::Racing {
        let (ea, eb) = (build_environment(&a)?, build_environment(&b)?);
        if ea.hash() != eb.hash() {
            return Err(HarnessError::Mismatch(
                "the two configurations generate different racing environments".into(),
            ));
        }
        environment_hash = Some(ea.hash());
    }
    let ra = run(&a)?;
    let rb = run(&b)?;

    match (&ra.outcome, &rb.outcome) {
        (Outcome::Racing(x), Outcome::Racing(y)) => {
            let mut sx = SummaryRow::from(&x.summary);
            let mut sy = SummaryRow::from(&y.summary);
            sx.controller.clone_from(&labels[0]);
            sy.controller.clone_from(&labels[1]);
            w.csv("comparison.csv", &[sx, sy])?;
            let mut tx = status_row(x);
            let mut ty = status_row(y);
            tx.controller.clone_from(&labels[0]);
            ty.controller.clone_from(&labels[1]);
            w.csv("comparison_status.csv", &[tx, ty])?;
            if a.plot || b.plot {
                let env = build_environment(&a)?;
                let svg = plot::track_overview(
                    &env,
                    &[
                        (labels[0].as_str(), trajectory(&x.record)),
                        (labels[1].as_str(), trajectory(&y.record)),
                    ],
                );
                w.text("comparison.svg", &svg)?;
            }
        }
        (Outcome::Rastrigin(x), Outcome::Rastrigin(y)) => {
            let mut rx = x.row.clone();
            let mut ry = y.row.clone();
            rx.controller.clone_from(&labels[0]);
            ry.controller.clone_from(&labels[1]);
            w.csv("comparison.csv", &[rx, ry])?;
        }
        _ => unreachable!("benchmarks were checked to match"),
    }
    Ok(CompareReport {
        labels,
        reports: [ra, rb],
        environment_hash,
    })
}
