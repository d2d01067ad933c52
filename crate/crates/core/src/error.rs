//! Error type shared by every module in the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A file or stream could not be parsed. `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A precomputed embedding provider has no vector for the given text.
    #[error("no embedding for text {0:?}")]
    MissingEmbedding(String),

    /// A subscription ID has no entry in the description map.
    #[error("no description for subscription id {0:?}")]
    MissingDescription(String),

    /// b_max < 1: not even a single event fits the window next to the
    /// subscription block. The caller decides between truncation and a
    /// hard error.
    #[error("batch infeasible: the window cannot fit one event beside the subscriptions")]
    BatchInfeasible,

    /// A cluster's subscription block cannot fit the context window and
    /// truncation was not enabled.
    #[error("subscriptions exceed context window in cluster {cluster}: {message}")]
    SubscriptionsExceedWindow { cluster: usize, message: String },

    /// A backend returned a payload that does not follow the protocol
    /// (malformed JSON, out-of-range indices), after any retry.
    #[error("backend protocol error: {0}")]
    BackendProtocol(String),

    /// A backend could not be reached at all.
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),

    /// QoE assignment found no backend with usable calibration signal.
    #[error("no viable backend: every candidate calibrated to zero F1")]
    NoViableBackend,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
