use thiserror::Error;

use crate::sim::SimLog;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("integration diverged at t = {t}")]
    IntegrationDiverged { t: f64 },

    #[error("closed-loop matrix is not Hurwitz (spectral abscissa {abscissa})")]
    NotStabilized { abscissa: f64 },

    #[error("pair (A, B) is not stabilizable")]
    NotStabilizable,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("terminal region synthesis failed: {0}")]
    RegionSynthesis(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("terminal constraint not met after penalty escalation (best V_f = {best_terminal_vf}, target {target})")]
    Infeasible { best_terminal_vf: f64, target: f64 },

    #[error("internal inconsistency: {0}")]
    Internal(String),

    #[error("initial optimal control problem is infeasible: {0}")]
    InitialInfeasible(Box<Error>),

    #[error("feasibility lost at t = {t}: {reason}")]
    FeasibilityLost {
        t: f64,
        reason: String,
        log: Box<SimLog>,
    },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}
