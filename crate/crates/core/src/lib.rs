//! Robust optimal control by local reduction.
//!
//! The library solves min-max optimal control problems of the form
//! "find policy parameters such that constraints hold for every realisation
//! of the uncertainty" by alternating two finite-dimensional problems:
//!
//! 1. a lower-level solve that optimises the policy parameters against a
//!    finite set of scenarios, and
//! 2. an upper-level search that looks for a new uncertainty realisation
//!    maximising constraint violation under the current policy.
//!
//! Violating scenarios are accumulated in a growing scenario set until no
//! new violating realisation can be found.
//!
//! Module map:
//! - [`ocp`]: problem types, closed-loop rollout, aggregated constraint
//!   functional `G`
//! - [`nlp`]: augmented-Lagrangian solver with a projected quasi-Newton
//!   inner loop, used by both levels
//! - [`reduction`]: the outer algorithm and scenario-set bookkeeping
//! - [`models`]: shipped case studies (building thermal control,
//!   centrifugal compressor flow control, and a scalar analysis example)
//! - [`validation`]: Monte Carlo validation of a fixed decision vector

pub mod models;
pub mod nlp;
pub mod ocp;
pub mod reduction;
pub mod validation;

pub use ocp::{
    DecisionVector, GArgmax, GValue, OcpError, ProblemDefinition, Rollout, Scenario,
    UncertaintyBounds,
};
pub use reduction::{
    IterationRecord, LocalReductionConfig, RunOutcome, RunStatus, ScenarioSet,
};
pub use validation::ValidationReport;
