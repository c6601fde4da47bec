use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("statistical error: {message} (need at least {required})")]
    Statistical { message: String, required: usize },
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn statistical(msg: impl Into<String>, required: usize) -> Self {
        Error::Statistical {
            message: msg.into(),
            required,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
