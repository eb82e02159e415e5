use std::fmt;

use thiserror::Error;

/// Residual segment an AR(1) estimate refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pre,
    Post,
    /// Whole residual span, used by the no-change-point model.
    Whole,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pre => "pre-change",
            Phase::Post => "post-change",
            Phase::Whole => "single-regime",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("candidate change point q={q} outside the admissible range 4..={max} for series length T={len}", max = .len.saturating_sub(2))]
    Window { q: usize, len: usize },

    #[error("{phase} phase has {pairs} lag pair(s); at least 2 are required")]
    TooFewPairs { phase: Phase, pairs: usize },

    #[error("{phase} phase residuals have zero variance")]
    DegeneratePhase { phase: Phase },

    #[error("AR coefficient {phi} violates causality (|phi| must be < 1)")]
    Causality { phi: f64 },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("rank-deficient system: {0}")]
    RankDeficient(String),

    #[error("unit '{unit}' at q={q}: {source}")]
    Unit {
        unit: String,
        q: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(
        "fit for unit '{unit}' did not converge after {iterations} iterations; inference refused"
    )]
    NotConverged { unit: String, iterations: usize },

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}, column '{column}': {message}")]
    Parse {
        line: u64,
        column: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for problems with user-supplied data or configuration, as opposed
    /// to numerical failures during estimation.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Window { .. }
            | Error::TooFewPairs { .. }
            | Error::InvalidPanel(_)
            | Error::InvalidWindow(_)
            | Error::InvalidArgument(_)
            | Error::Parse { .. }
            | Error::Io(_) => true,
            Error::Unit { source, .. } => source.is_input_error(),
            _ => false,
        }
    }

    pub(crate) fn in_unit(self, unit: &str, q: usize) -> Error {
        Error::Unit {
            unit: unit.to_owned(),
            q,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
