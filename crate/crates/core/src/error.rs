use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("outside the theory's hypotheses: {0}")]
    OutOfTheory(String),
    #[error("root not bracketed: {0}")]
    NotBracketed(String),
    #[error("step size underflow at t = {0}")]
    StepUnderflow(f64),
    #[error("singular bordered system: {0}")]
    Singular(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("non-finite field at t = {t}: {what}")]
    BlowUp { t: f64, what: String },
    #[error("config: {0}")]
    Config(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
