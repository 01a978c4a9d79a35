use std::path::PathBuf;

use thiserror::Error;

use crate::grid::Dims;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions {0:?}")]
    InvalidDims(Dims),
    #[error("spacing must be positive and finite, got {0:?}")]
    InvalidSpacing([f64; 3]),
    #[error("data length {actual} does not match voxel count {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimMismatch(Dims, Dims),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDtype(i16),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated data: expected {expected} bytes, found {actual}")]
    TruncatedData { expected: usize, actual: usize },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("run lengths sum to {actual}, expected {expected}")]
    RunSumMismatch { expected: u64, actual: u64 },
    #[error("invalid run-length encoding: {0}")]
    InvalidRuns(String),

    #[error("mask is empty")]
    EmptyMask,
    #[error("slice is empty")]
    EmptySlice,
    #[error("prediction has no false positives")]
    NoFalsePositives,

    #[error("scheme needs at least {min} anchors, got {n}")]
    NTooSmall { n: usize, min: usize },
    #[error("slice {0} has no background pixels")]
    FullSlice(usize),
    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),
    #[error("unknown oracle `{0}`")]
    UnknownOracle(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("segmenter lacks capability: {0}")]
    CapabilityMissing(String),
    #[error("segmenter failure: {0}")]
    SegmenterFailure(String),
    #[error("prediction already matches the ground truth")]
    AlreadyPerfect,
    #[error("nothing to refine")]
    NothingToRefine,
    #[error("could not place {0} instances in the volume")]
    PlacementFailure(usize),

    #[error("ground truth is empty")]
    EmptyGroundTruth,

    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
