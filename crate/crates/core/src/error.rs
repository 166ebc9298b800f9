use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("matrix is not positive definite: pivot {index} is {value:e}")]
    NotPositiveDefinite { index: usize, value: f64 },

    #[error("degenerate feature map: {0}")]
    Degenerate(String),

    #[error("gradient requested for a non-scalar output of shape {rows}x{cols}")]
    NonScalarOutput { rows: usize, cols: usize },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("mask collapse: layer {layer} has no surviving weights")]
    MaskCollapse { layer: usize },

    #[error(transparent)]
    Idx(#[from] crate::data::IdxError),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
