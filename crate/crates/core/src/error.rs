use alloc::string::String;

use crate::population::ValidationReport;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Input is malformed: ragged arrays, non-finite entries, bad weights.
    #[error("structural error: {0}")]
    Structural(String),

    /// The population breaks one or more standing assumptions.
    #[error("population violates {} assumption(s)", .0.violations.len())]
    Invalid(ValidationReport),

    #[error("{what} = {value} is outside its domain")]
    Domain { what: &'static str, value: f64 },

    /// `1 + ψ` (or `1 + E[θγ/(1-γ)]`) vanished.
    #[error("singular population aggregate at t = {t}: 1 + {what} = {value}")]
    SingularAggregate {
        what: &'static str,
        t: f64,
        value: f64,
    },

    /// Non-finite value produced while integrating an ODE.
    #[error("integration blew up at knot {knot} (t = {t})")]
    BlowUp { knot: usize, t: f64 },

    #[error("{what} out of floating-point range at t = {t} (value {value})")]
    Range {
        what: &'static str,
        t: f64,
        value: f64,
    },
}
