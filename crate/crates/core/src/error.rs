use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    Invalid(String),

    #[error("time index {t} out of range for horizon {horizon}")]
    TimeOutOfRange { t: usize, horizon: usize },

    #[error("length mismatch in {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {what} at t={t}")]
    NonFinite { what: &'static str, t: usize },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("cannot set `{path}` to `{value}`: {reason}")]
    BadOverride {
        path: String,
        value: String,
        reason: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("no event found: no observation below -{threshold}")]
    NoEvent { threshold: f64 },

    #[error("{0}")]
    Data(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
