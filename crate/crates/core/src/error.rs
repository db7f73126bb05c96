use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("point ({x}, {y}) lies outside the grid extent")]
    OutsideGrid { x: f64, y: f64 },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("layer `{0}` is constant over the masked cells")]
    ConstantLayer(String),

    #[error("missing layer `{0}`")]
    MissingLayer(String),

    #[error("grids do not match: {0}")]
    GridMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate pattern: {0}")]
    Degenerate(String),

    #[error("coincident points: edge correction undefined for s = u")]
    CoincidentPoints,

    #[error("circulant embedding failed: minimum eigenvalue {min_eig:e} (relative {relative:e}) after expanding to {m}x{n}")]
    Embedding {
        min_eig: f64,
        relative: f64,
        m: usize,
        n: usize,
    },

    #[error("intensity overflow: {0}")]
    Overflow(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("MCMC failure: {0}")]
    Mcmc(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable identifier, used by the CLI error report and
    /// mapped to integer codes by the C interface.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidWindow(_) => "invalid_window",
            Error::InvalidGrid(_) => "invalid_grid",
            Error::OutsideGrid { .. } => "outside_grid",
            Error::Parse { .. } => "parse",
            Error::ConstantLayer(_) => "constant_layer",
            Error::MissingLayer(_) => "missing_layer",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Degenerate(_) => "degenerate",
            Error::CoincidentPoints => "coincident_points",
            Error::Embedding { .. } => "embedding",
            Error::Overflow(_) => "overflow",
            Error::NonFinite(_) => "non_finite",
            Error::Mcmc(_) => "mcmc",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
