//! Error type shared by all solver modules.

use thiserror::Error;

/// Errors surfaced by configuration loading, harmonic-function
/// construction, the majorant solver, the crash model, and the oracles.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Malformed configuration text.
    #[error("parse error: {0}")]
    Parse(String),

    /// A structural invariant of the problem data is violated.
    #[error("validation error: {0}")]
    Validation(String),

    /// A state argument lies outside the admissible interval.
    #[error("domain error: {0}")]
    Domain(String),

    /// The Riccati run-in did not forget its initial condition before
    /// entering the requested window; widen the truncation.
    #[error("truncation error: {0}")]
    Truncation(String),

    /// Adaptive step size underflowed while integrating the ODE.
    #[error("stiffness error: {0}")]
    Stiffness(String),

    /// The Wronskian of a fundamental pair vanished at the merge point;
    /// signals a corrupt table, not a property of genuine pairs.
    #[error("singular wronskian: {0}")]
    SingularWronskian(String),

    /// sup g/h_c diverges for every candidate c; the value is +infinity.
    #[error("unbounded value: {0}")]
    UnboundedValue(String),

    /// The merge-point equation sup_left(c) = sup_right(c) has no sign
    /// change on the truncated range.
    #[error("bisection failure: {0}")]
    BisectionFailure(String),

    /// Root bracket endpoints do not have opposite signs.
    #[error("bracket error: {0}")]
    Bracket(String),

    /// The single-crossing structure required by the closed-form crash
    /// equilibrium does not hold.
    #[error("structure error: {0}")]
    Structure(String),

    /// Diffusion/boundary behaviour outside the supported class.
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable code, stable across releases.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse(_) => "parse",
            Error::Validation(_) => "validation",
            Error::Domain(_) => "domain",
            Error::Truncation(_) => "truncation",
            Error::Stiffness(_) => "stiffness",
            Error::SingularWronskian(_) => "singular_wronskian",
            Error::UnboundedValue(_) => "unbounded_value",
            Error::BisectionFailure(_) => "bisection_failure",
            Error::Bracket(_) => "bracket",
            Error::Structure(_) => "structure",
            Error::Unsupported(_) => "unsupported",
        }
    }

    /// Process exit code for the CLI: 2 config trouble, 3 numeric trouble.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::Validation(_) | Error::Domain(_) | Error::Unsupported(_) => 2,
            _ => 3,
        }
    }
}
