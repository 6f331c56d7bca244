//! Error type shared by every module.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("band too wide: {0}")]
    BandTooWide(String),
    #[error("admissibility violation: {0}")]
    Admissibility(String),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("chart error: {0}")]
    Chart(String),
    #[error("degenerate state: {0}")]
    Degenerate(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("continuation step failed at s = {s}: {reason}")]
    Continuation { s: f64, reason: String },
    #[error("branch end at s = {0}: injectivity margin lost")]
    BranchEnd(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl Error {
    /// Stable snake-case tag for machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::Geometry(_) => "geometry",
            Error::BandTooWide(_) => "band_too_wide",
            Error::Admissibility(_) => "admissibility",
            Error::Topology(_) => "topology",
            Error::Chart(_) => "chart",
            Error::Degenerate(_) => "degenerate",
            Error::NoConvergence(_) => "no_convergence",
            Error::Continuation { .. } => "continuation",
            Error::BranchEnd(_) => "branch_end",
            Error::Io(_) => "io",
            Error::Format(_) => "format",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
