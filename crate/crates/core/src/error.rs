use thiserror::Error;

/// Errors raised by estimation, generation and I/O.
#[derive(Debug, Error)]
pub enum SnrError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch { context: &'static str, expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive semidefinite (pivot {pivot:.3e} at index {index})")]
    NotPositiveSemiDefinite { index: usize, pivot: f64 },

    /// `ρ̂² + σ̂² == 0`, so the ratio is undefined.
    #[error("degenerate response: estimated total variance is zero")]
    DegenerateResponse,

    /// `ĝ₂ − (p/n)ĝ₁²` vanishes to working precision.
    #[error("singular moment system: denominator {denom:.3e} below tolerance")]
    SingularMomentSystem { denom: f64 },

    #[error("group {group}: {source}")]
    Group {
        group: usize,
        #[source]
        source: Box<SnrError>,
    },

    #[error("generation failed: {0}")]
    GenerationFailed(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}, column {column}: invalid number {token:?}")]
    Parse { line: usize, column: usize, token: String },

    #[error("ragged rows: line {line} has {found} columns, expected {expected}")]
    RaggedRows { line: usize, expected: usize, found: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SnrError {
    /// Stable variant name, printed by the CLI on standard error.
    pub fn name(&self) -> &'static str {
        match self {
            SnrError::DimensionMismatch { .. } => "DimensionMismatch",
            SnrError::InvalidParameter(_) => "InvalidParameter",
            SnrError::NotPositiveSemiDefinite { .. } => "NotPositiveSemiDefinite",
            SnrError::DegenerateResponse => "DegenerateResponse",
            SnrError::SingularMomentSystem { .. } => "SingularMomentSystem",
            SnrError::Group { source, .. } => source.name(),
            SnrError::GenerationFailed(_) => "GenerationFailed",
            SnrError::EmptyInput(_) => "EmptyInput",
            SnrError::Config(_) => "ConfigError",
            SnrError::Parse { .. } => "ParseError",
            SnrError::RaggedRows { .. } => "RaggedRows",
            SnrError::Io(_) => "IoError",
        }
    }

    /// True for failures caused by bad input files or configuration rather
    /// than by the estimators themselves.
    pub fn is_usage(&self) -> bool {
        matches!(self, SnrError::Config(_) | SnrError::Parse { .. } | SnrError::RaggedRows { .. } | SnrError::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, SnrError>;
