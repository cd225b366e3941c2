use thiserror::Error;

pub type Result<T> = std::result::Result<T, IlrError>;

#[derive(Debug, Error)]
pub enum IlrError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("matrix is not symmetric (max relative deviation {deviation:e})")]
    Asymmetric { deviation: f64 },

    #[error("eigendecomposition did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("matrix is not positive semi-definite (eigenvalue {eigenvalue:e})")]
    NotPsd { eigenvalue: f64 },

    #[error("matrix is singular or not positive definite (pivot {pivot} = {value:e})")]
    Singular { pivot: usize, value: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("numeric overflow: non-finite activation in layer {layer}")]
    Overflow { layer: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("need at least {needed} samples, got {got}")]
    SampleSize { needed: usize, got: usize },

    #[error("degenerate GCV denominator at lambda = {lambda:e}")]
    DegenerateGcv { lambda: f64 },

    #[error("no admissible lambda on the grid")]
    Selection,

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("estimator failed on context {index}: {source}")]
    Estimator {
        index: usize,
        #[source]
        source: Box<IlrError>,
    },

    #[error("format error in field `{field}`: {reason}")]
    Format { field: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IlrError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        IlrError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(field: &'static str, reason: impl Into<String>) -> Self {
        IlrError::Format {
            field,
            reason: reason.into(),
        }
    }
}
