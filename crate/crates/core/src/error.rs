use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A CSV file could not be turned into labeled samples.
    #[error("ingestion error in {file}, row {row}, column `{column}`: {message}")]
    Ingest {
        file: String,
        /// 1-based data row (the header is row 0).
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("binning error: {0}")]
    Binning(String),

    #[error("fitting error: {0}")]
    Fit(String),

    #[error("support error: target label {label} never appears in the source sample")]
    Support { label: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error classes, used for CLI exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Usage(_) => ErrorClass::Usage,
            Error::Stage { source, .. } => source.class(),
            Error::Io { .. } => ErrorClass::Usage,
            Error::Ingest { .. }
            | Error::Data(_)
            | Error::Binning(_)
            | Error::Fit(_)
            | Error::Support { .. } => ErrorClass::Data,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
