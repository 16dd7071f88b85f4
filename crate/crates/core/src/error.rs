use std::fmt;

use serde::Serialize;

/// Location of a constraint whose slack is not strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintIndex {
    /// `Q(s,a) > (FQ)(s,a,a')`
    Triple {
        state: usize,
        action: usize,
        next_action: usize,
    },
    /// `Q(s,a) > (T^pi Q)(s,a)`
    Pair { state: usize, action: usize },
    /// `Q(s,a) > r(s,a,s') + gamma Q(s',a')`
    Transition {
        state: usize,
        action: usize,
        next_state: usize,
        next_action: usize,
    },
}

impl fmt::Display for ConstraintIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ConstraintIndex::Triple {
                state,
                action,
                next_action,
            } => write!(f, "(s={state}, a={action}, a'={next_action})"),
            ConstraintIndex::Pair { state, action } => write!(f, "(s={state}, a={action})"),
            ConstraintIndex::Transition {
                state,
                action,
                next_state,
                next_action,
            } => write!(f, "(s={state}, a={action}, s'={next_state}, a'={next_action})"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid value for {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("point outside the barrier domain at {index}: slack {slack:e}")]
    OutOfDomain { index: ConstraintIndex, slack: f64 },

    #[error("iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("linear system is singular at pivot {pivot}")]
    Singular { pivot: usize },

    #[error("state {state} carries no dual mass")]
    DegenerateState { state: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("model file {context}: {message}")]
    Parse { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Error {
    Error::Invalid {
        what,
        reason: reason.into(),
    }
}
