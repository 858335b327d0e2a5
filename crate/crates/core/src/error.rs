use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("history coverage too short: truncated kernel mass {truncated_mass:.3e}")]
    Coverage { truncated_mass: f64 },

    #[error("invalid chain order {0}; orders must be >= 1")]
    InvalidOrder(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("fixpoint does not exist for these parameters")]
    NoFixpoint,

    #[error("integration diverged at t = {time}")]
    Divergence { time: f64 },

    #[error("no Hopf crossing{}", match .order { Some(n) => format!(" at order N = {n}"), None => String::new() })]
    NoHopf { order: Option<usize> },

    #[error("1 + T_N*lambda vanishes; the logarithm has a pole")]
    PoleOfLog,

    #[error("relative deviation undefined for a zero reference")]
    UndefinedMetric,

    #[error("insufficient data: found {found}, need at least {required}")]
    InsufficientData { found: usize, required: usize },

    #[error("bad bracket: diagnostics agree at both ends ({0})")]
    BadBracket(String),

    #[error("insufficient retained history: {0}")]
    InsufficientHistory(String),
}

pub type Result<T> = std::result::Result<T, Error>;
