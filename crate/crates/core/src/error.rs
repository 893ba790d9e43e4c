use thiserror::Error;

/// Errors produced by the matching library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("unsupported dimension {0} (only planar inputs are supported here)")]
    UnsupportedDimension(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("non-finite value in {what}{}", iteration.map(|k| format!(" at iteration {k}")).unwrap_or_default())]
    Numeric {
        what: String,
        iteration: Option<usize>,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn numeric(what: impl Into<String>) -> Self {
        Error::Numeric {
            what: what.into(),
            iteration: None,
        }
    }

    /// Attach a pipeline stage label.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage labels peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for failures of the numerics rather than of the input.
    pub fn is_numeric(&self) -> bool {
        matches!(self.root(), Error::Numeric { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
