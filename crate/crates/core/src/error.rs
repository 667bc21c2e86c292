use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {details}")]
    Shape { op: &'static str, details: String },

    #[error("invalid argument to {op}: {details}")]
    Invalid { op: &'static str, details: String },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("training aborted at iteration {iteration}: {msg}")]
    TrainingAborted { iteration: u64, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {msg}")]
    Format { path: String, msg: String },
}

impl Error {
    pub fn shape(op: &'static str, details: impl Into<String>) -> Error {
        Error::Shape {
            op,
            details: details.into(),
        }
    }

    pub fn invalid(op: &'static str, details: impl Into<String>) -> Error {
        Error::Invalid {
            op,
            details: details.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
