//! Optimal control of a household battery under fluctuating electricity
//! prices.
//!
//! The library models the storage problem as a discounted-cost Markov
//! decision process over a discretized battery grid, solves it by value or
//! policy iteration, extracts the two-threshold structure of the optimal
//! policy (charge up to `beta_minus` when below it, discharge down to
//! `beta_plus` when above it), and replays the resulting policy against
//! price/demand traces to measure cost savings.
//!
//! Module map:
//!
//! * [`model`] — battery parameters, dynamics, feasible control sets and the
//!   per-slot cost of a storage decision.
//! * [`mdp`] — grids, exogenous-state enumeration and transition kernels.
//! * [`solver`] — Bellman backup, value iteration, policy iteration and a
//!   finite-horizon oracle.
//! * [`thresholds`] — threshold extraction, the subgradient characterization
//!   of the optimal thresholds, and analytic certificates.
//! * [`ingest`] — CSV trace loading, per-hour empirical distributions and
//!   synthetic trace generators.
//! * [`sim`] — policy replay, baselines, battery-size sweeps and pooling
//!   experiments.
//! * [`verify`] — structural checks bundled into a pass/fail report.

pub mod error;
pub mod ingest;
pub mod mdp;
pub mod model;
pub mod sim;
pub mod solver;
pub mod testkit;
pub mod thresholds;
pub mod verify;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
