use thiserror::Error;

/// Errors produced by the surrogate library.
#[derive(Debug, Error)]
pub enum HdmrError {
    #[error("basis index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("size error: {0}")]
    Size(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("undefined statistics: model variance is zero")]
    ZeroVariance,

    #[error("undefined metric: reference values have zero norm")]
    ZeroNorm,

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("coercivity violated: {0}")]
    Coercivity(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    Schema { found: u64, expected: u64 },

    #[error("malformed document: {0}")]
    Malformed(String),

    #[error("linear algebra failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HdmrError {
    /// True for errors caused by the input data rather than configuration or fitting.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            HdmrError::Parse { .. }
                | HdmrError::Size(_)
                | HdmrError::NonFinite(_)
                | HdmrError::Io(_)
                | HdmrError::Malformed(_)
                | HdmrError::Schema { .. }
                | HdmrError::Shape(_)
        )
    }

    pub fn is_config_error(&self) -> bool {
        matches!(self, HdmrError::Config(_) | HdmrError::IndexOutOfRange { .. })
    }
}

pub type Result<T> = std::result::Result<T, HdmrError>;
