use thiserror::Error;

pub type Result<T> = std::result::Result<T, CltmError>;

#[derive(Debug, Error)]
pub enum CltmError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("degenerate marginal: a marginal probability is zero")]
    DegenerateMarginal,

    #[error("series has zero sample variance")]
    ZeroVariance,

    #[error("distance between {left} and {right}: {source}")]
    Pair {
        left: String,
        right: String,
        #[source]
        source: Box<CltmError>,
    },

    #[error("unknown node: {0}")]
    UnknownNode(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inconsistent distance matrix: {0}")]
    InconsistentDistances(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<CltmError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CltmError {
    pub(crate) fn stage(stage: &str, source: CltmError) -> Self {
        CltmError::Stage {
            stage: stage.to_string(),
            source: Box::new(source),
        }
    }
}
