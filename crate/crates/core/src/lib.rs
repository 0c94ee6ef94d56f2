//! Stochastic chemotherapy appointment scheduling.
//!
//! A day schedule fixes a patient sequence and integer appointment times
//! before treatment durations are known. Each duration scenario is then
//! served by the first-available nurse and chair rule. The crate provides the
//! evaluator, a per-scenario subproblem search, the linearized progressive
//! hedging driver, benchmark heuristics, and an instance generator.

pub mod analysis;
mod descent;
pub mod evaluator;
pub mod model;
pub mod gen;
pub mod heuristics;
pub mod lpha;
pub mod subproblem;

pub use evaluator::{evaluate, brute_force_second_stage, EvalError, EvaluatorConfig};
pub use model::{
    FirstStageSchedule, Instance, Minutes, ObjectiveWeights, Patient, Scenario, SecondStageOutcome,
};
