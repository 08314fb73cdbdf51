use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {path}: expected VXT1, found {found:?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("unsupported tensor version {version} in {path}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("unsupported dtype code {code} in {path}")]
    UnsupportedDtype { path: PathBuf, code: u8 },

    #[error("truncated tensor {path}: expected {expected} bytes, found {actual} ({deficit} byte deficit)")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
        deficit: u64,
    },

    #[error("trailing data in {path}: expected {expected} bytes, found {actual}")]
    TrailingBytes {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("invalid manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("voxel-count mismatch in story '{story}': expected {expected} voxels, found {found}")]
    VoxelMismatch {
        story: String,
        expected: usize,
        found: usize,
    },

    #[error("timestamps not strictly increasing in {context} at index {index}")]
    NonMonotone { context: String, index: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Short stable identifier for machine-readable diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::BadMagic { .. } => "bad_magic",
            Error::UnsupportedVersion { .. } => "unsupported_version",
            Error::UnsupportedDtype { .. } => "unsupported_dtype",
            Error::Truncated { .. } => "truncated",
            Error::TrailingBytes { .. } => "trailing_bytes",
            Error::Manifest { .. } => "manifest",
            Error::VoxelMismatch { .. } => "voxel_mismatch",
            Error::NonMonotone { .. } => "non_monotone",
            Error::Shape(_) => "shape",
            Error::InvalidInput(_) => "invalid_input",
            Error::Numerical(_) => "numerical",
        }
    }

    /// Whether the failure stems from files or arguments rather than computation.
    pub fn is_io_or_usage(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::BadMagic { .. }
                | Error::UnsupportedVersion { .. }
                | Error::UnsupportedDtype { .. }
                | Error::Truncated { .. }
                | Error::TrailingBytes { .. }
                | Error::Manifest { .. }
                | Error::VoxelMismatch { .. }
                | Error::NonMonotone { .. }
        )
    }
}
