//! Crate-wide error type.

use thiserror::Error;

/// A single policy-table cell that breaks the expected threshold shape.
#[derive(Debug, Clone, PartialEq)]
pub struct CellWitness {
    /// Exogenous-state index.
    pub state: usize,
    /// Battery grid index.
    pub level: usize,
    /// Target level (kWh) the policy actually prescribes.
    pub actual_kwh: f64,
    /// Target level (kWh) the threshold rule prescribes.
    pub expected_kwh: f64,
}

impl std::fmt::Display for CellWitness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "state {} level {}: policy -> {} kWh, threshold rule -> {} kWh",
            self.state, self.level, self.actual_kwh, self.expected_kwh
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// A constructor or operation received arguments outside its domain.
    #[error("invalid {what}: {details}")]
    InvalidParameter { what: &'static str, details: String },

    /// A requested battery target lies outside the feasible control set.
    #[error("infeasible target {beta} kWh from level {from} kWh: violates {bound} = {value} kWh")]
    InfeasibleTarget {
        beta: f64,
        from: f64,
        bound: &'static str,
        value: f64,
    },

    /// Battery dynamics produced a level outside `[0, b_max]`.
    #[error("dynamics violation: next level {next} kWh outside [0, {b_max}] kWh")]
    DynamicsViolation { next: f64, b_max: f64 },

    /// An iterative solver hit its iteration cap before meeting its tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// A converged policy is not reproducible by any two-threshold rule.
    #[error("policy is not of threshold form ({} offending cells; first: {})",
            witnesses.len(), witnesses.first().map(|w| w.to_string()).unwrap_or_default())]
    StructureViolation { witnesses: Vec<CellWitness> },

    /// Two routes that must agree (extraction vs. certificates, subgradient
    /// ordering) disagree.
    #[error("internal consistency check failed: {0}")]
    Inconsistent(String),

    /// The operation's statistical preconditions do not hold for this model.
    #[error("precondition not met: {0}")]
    PreconditionNotMet(String),

    /// Malformed input data.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(what: &'static str, details: impl Into<String>) -> Self {
        Error::InvalidParameter {
            what,
            details: details.into(),
        }
    }
}
