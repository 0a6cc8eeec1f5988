use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{family} potential is undefined at r = {r}")]
    OutsideDomain { family: &'static str, r: f64 },

    #[error("input has nonzero generalized mean {mean:e}; project it onto mean-zero pairs first")]
    NonzeroMean { mean: f64 },

    #[error("stream function is not constant along the {wall} wall (deviation {deviation:e})")]
    StreamNotWallConstant { wall: &'static str, deviation: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("linear solver breakdown: {0}")]
    LinearSolve(String),

    #[error("at time step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("adjoint march needs a stored state at step {0}")]
    MissingCheckpoint(usize),

    #[error("line search failed after {halvings} halvings (J = {cost:e}, |grad| = {grad_norm:e})")]
    LineSearch {
        halvings: usize,
        cost: f64,
        grad_norm: f64,
    },

    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("field dump: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_step(step: usize, source: Error) -> Self {
        Error::AtStep {
            step,
            source: Box::new(source),
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            what,
            expected,
            actual,
        })
    }
}
