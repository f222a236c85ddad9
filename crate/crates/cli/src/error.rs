use std::path::PathBuf;

use bookend_core::corpus::CorpusError;
use bookend_core::metrics::MetricsError;
use bookend_core::preprocessing::PreprocessError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config file {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    CorpusFile {
        path: PathBuf,
        #[source]
        source: CorpusError,
    },
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{failed} of {total} starts failed, details in {report}")]
    Partial {
        failed: usize,
        total: usize,
        report: PathBuf,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn corpus(path: impl Into<PathBuf>) -> impl FnOnce(CorpusError) -> Self {
        let path = path.into();
        move |source| Self::CorpusFile { path, source }
    }

    /// Stable, machine-readable category.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Usage(_) => "invalid_input",
            Self::Config { .. } => "config",
            Self::Io { .. } => "io",
            Self::Corpus(_) | Self::CorpusFile { .. } => "corpus",
            Self::Preprocess(PreprocessError::Backend(_)) | Self::Metrics(MetricsError::Backend(_)) => "backend_error",
            Self::Preprocess(_) => "preprocess",
            Self::Metrics(_) => "metrics",
            Self::Partial { .. } => "generation_failed",
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
