//! Error type shared across the crate.

use thiserror::Error;

/// Errors surfaced by the public API.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand dimensions are incompatible for the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A requested truncation or adapter rank is outside `1..=min(rows, cols)`.
    #[error("rank {rank} out of range (max {max})")]
    RankOutOfRange { rank: usize, max: usize },

    /// The SVD sweep loop hit its iteration budget without converging.
    #[error("svd failed to converge within {sweeps} sweeps")]
    SvdNoConvergence { sweeps: usize },

    /// A matrix contained NaN or infinite entries where finite values are required.
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    /// Local training produced non-finite parameters.
    #[error("divergence at step {step}{}", context_suffix(.round, .client))]
    Divergence {
        step: usize,
        round: Option<usize>,
        client: Option<usize>,
    },

    /// A configuration field failed validation.
    #[error("invalid config field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    /// An operation that needs at least one element received none.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// The requested operation is not available in the configured client mode.
    #[error("unsupported client mode: {0}")]
    UnsupportedMode(&'static str),

    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn context_suffix(round: &Option<usize>, client: &Option<usize>) -> String {
    let mut s = String::new();
    if let Some(r) = round {
        s.push_str(&format!(" (round {r}"));
        if let Some(c) = client {
            s.push_str(&format!(", client {c}"));
        }
        s.push(')');
    } else if let Some(c) = client {
        s.push_str(&format!(" (client {c})"));
    }
    s
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attach round/client context to a divergence error bubbling out of a round.
    pub(crate) fn with_round_context(self, round: usize, client: usize) -> Self {
        match self {
            Error::Divergence { step, .. } => Error::Divergence {
                step,
                round: Some(round),
                client: Some(client),
            },
            other => other,
        }
    }
}
