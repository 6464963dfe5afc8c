//! Optimal control of marked point processes on finite state spaces.
//!
//! The crate simulates controlled jump processes, solves the associated
//! dynamic programming system by backward marching and by contraction
//! iteration, and certifies the underlying analytical machinery by Monte
//! Carlo: likelihood-ratio normalization and moments, compensator tilts,
//! pathwise Itô-type identities, backward-equation residuals, the weighted
//! energy identity, a priori stability bounds, and the optimality of the
//! extracted feedback policy against a brute-force oracle.

pub mod bsde;
pub mod control;
pub mod girsanov;
pub mod hamiltonian;
pub mod hjb;
pub mod instances;
pub mod model;
mod pathwise;
pub mod sim;

pub use hjb::{hjb_march, hjb_picard, picard_step, policy_value, ConvergenceReport, ValueField};
pub use model::{BetaReport, LipschitzConstants, Model, ModelError, ModelSpec, MODEL_SCHEMA};
pub use sim::{simulate_controlled, simulate_reference, Policy, Trajectory};
