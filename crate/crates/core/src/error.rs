use std::path::PathBuf;

/// Errors raised across the crate.
///
/// Numeric failures inside a solve (divergence, runaway precision) are *not*
/// errors; they are reported through the solver outcome so sweeps can record
/// them and keep going.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value at site {site}")]
    NonFinite { site: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown dataset '{0}' (expected sine, cubic or curve)")]
    UnknownDataset(String),

    #[error("lattice [{lat_lo}, {lat_hi}] is outside the dataset domain [{lo}, {hi}]")]
    DomainMismatch {
        lat_lo: f64,
        lat_hi: f64,
        lo: f64,
        hi: f64,
    },

    #[error("cannot draw {requested} points from {available}")]
    SubsampleTooLarge { requested: usize, available: usize },

    #[error("response has zero variance")]
    ZeroVariance,

    #[error("column '{0}' not found")]
    MissingColumn(String),

    #[error("non-numeric value '{value}' in column '{column}' at data row {row}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("file {0} has no data rows")]
    EmptyFile(PathBuf),

    #[error("dimension mismatch: network expects {expected} inputs, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("activation cache is stale (network changed since the forward pass)")]
    StaleCache,

    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that come from the filesystem rather than from bad
    /// input or configuration.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Csv(e) => e.is_io_error(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
