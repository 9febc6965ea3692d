//! Derivative-free constrained nonlinear MPC.
//!
//! The solver wraps an annealed ensemble Kalman inversion primal step inside a
//! two-block ADMM loop (slack projection and scaled dual ascent), and runs it
//! in receding horizon. An iterated MPPI planner is provided for comparison,
//! together with a constrained Rastrigin problem and a kinematic-bicycle
//! racing task.

// `!(x >= 0.0)` style checks are used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod benchmarks;
pub mod eki;
pub mod error;
pub mod mpc;
pub mod mppi;
pub mod parallel;
pub mod problem;
pub mod seeding;
pub mod weighting;

pub use admm::{admm_solve, dual_update, slack_update, AdmmConfig, AdmmSolution, AdmmState, Tolerances};
pub use eki::{eki_inner_loop, EkiConfig, SamplingCovariance};
pub use error::{Error, Result};
pub use mpc::{run_episode, AdmmEkiPlanner, Environment, MpcSession, MppiPlanner, Planner, RunRecord, Summary};
pub use mppi::MppiConfig;
pub use parallel::Execution;
pub use problem::{rollout, total_cost, ControlSequence, Dims, FnModel, InputBounds, Model, ProblemSpec, Weights};
pub use weighting::{build_weighting, BlockWeighting};
