use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("measure kind mismatch: {0}")]
    Kind(&'static str),

    #[error("too many atoms for exact transport: {atoms} > {limit}")]
    Size { atoms: usize, limit: usize },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("configuration error: missing evaluator `{0}`")]
    MissingEvaluator(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("kernel does not cover atom {0}")]
    Coverage(usize),

    #[error("simulation diverged at step {step} (t = {t})")]
    Divergence { step: usize, t: f64 },

    #[error("Riccati system ill-posed at t = {t}: {what}")]
    IllPosed { t: f64, what: &'static str },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
