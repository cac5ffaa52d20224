use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("generation failed: {0}")]
    Generation(String),

    #[error("invalid floor plan: {0}")]
    Validation(String),

    #[error("furniture placement failed: {0}")]
    Placement(String),

    #[error("pose sampling failed: {0}")]
    Sampling(String),

    #[error("parse error in {path}{}: {message}", field.as_ref().map(|f| format!(" (field `{f}`)")).unwrap_or_default())]
    Parse {
        path: String,
        field: Option<String>,
        message: String,
    },

    #[error("render failed: {0}")]
    Render(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("pose {x:.4}, {y:.4} is outside free space")]
    OutsideFreeSpace { x: f64, y: f64 },

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

    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Generation(_) => "generation",
            Error::Validation(_) => "validation",
            Error::Placement(_) => "placement",
            Error::Sampling(_) => "sampling",
            Error::Parse { .. } => "parse",
            Error::Render(_) => "render",
            Error::Dimension(_) => "dimension",
            Error::Empty(_) => "empty",
            Error::Degenerate(_) => "degenerate",
            Error::Training(_) => "training",
            Error::InvalidParams(_) => "invalid_params",
            Error::OutsideFreeSpace { .. } => "outside_free_space",
            Error::Io { .. } => "io",
        }
    }
}
