use std::path::PathBuf;

use volprompt_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{failed} of {total} sessions failed, above the allowed rate {max_rate}")]
    FailureThreshold { failed: usize, total: usize, max_rate: f64 },
    #[error("endpoint failed conformance")]
    ConformanceFailed,
    #[error("no results found in {}", .0.display())]
    EmptyResults(PathBuf),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = BenchError> = std::result::Result<T, E>;

impl BenchError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for anything wrong with the inputs, 3 for too many failed
    /// sessions, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            BenchError::Config(_) => 2,
            BenchError::Core(e) => match e {
                CoreError::UnknownScheme(_)
                | CoreError::UnknownOracle(_)
                | CoreError::InvalidParameter(_)
                | CoreError::CapabilityMissing(_)
                | CoreError::NTooSmall { .. }
                | CoreError::Json(_) => 2,
                _ => 1,
            },
            BenchError::FailureThreshold { .. } => 3,
            BenchError::ConformanceFailed | BenchError::EmptyResults(_) | BenchError::Io { .. } => 1,
        }
    }
}
