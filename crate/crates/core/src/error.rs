use thiserror::Error;

/// Errors produced by every stage of the pipeline.
///
/// The variants map onto the CLI exit-code contract: configuration and usage
/// problems exit with 2, numerical failures with 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("generator produced a zero vector before normalization")]
    DegenerateOutput,

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("diversity pool is exhausted")]
    PoolExhausted,

    #[error("nothing to render")]
    NothingToRender,

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::DegenerateOutput | Error::Calibration(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Usage(msg.into()))
}
