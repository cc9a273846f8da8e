//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building models, simulating paths,
/// running the solver, or evaluating certificates.
#[derive(Debug, Error)]
pub enum Error {
    /// A user-supplied parameter is outside its admissible range, or a
    /// configuration file asks for something the crate does not support.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A moment sequence fed to the orthonormalizer is inconsistent
    /// (e.g. negative pivot far beyond round-off, or too few moments).
    #[error("invalid moment sequence: {0}")]
    Moments(String),

    /// The regression design matrix is unusable even after dropping
    /// degenerate columns and applying the ridge fallback.
    #[error("degenerate regression design: {0}")]
    DegenerateDesign(String),

    /// A coefficient evaluator returned NaN or infinity at a sample point.
    #[error("evaluator failure: {0}")]
    Evaluator(String),

    /// The implicit step for the `h dA` term could not bracket a root;
    /// this indicates the drift `h` is not monotone-decreasing in `y`.
    #[error("implicit step failed: {0}")]
    ImplicitStep(String),

    /// The Picard iteration produced a non-finite residual.
    #[error("solver diverged: {0}")]
    Diverged(String),

    /// A quadrature routine could not reach its tolerance.
    #[error("quadrature failed: {0}")]
    Quadrature(String),

    /// Filesystem trouble while reading configs or writing reports.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// The TOML configuration file did not parse.
    #[error("config parse error: {0}")]
    Parse(#[from] Box<toml::de::Error>),
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(Box::new(e))
    }
}
