use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate degrees of freedom: n = {n}, p = {p} (need n > p + 1)")]
    DegreesOfFreedom { n: usize, p: usize },

    #[error("degenerate column `{column}`: {reason}")]
    DegenerateColumn { column: String, reason: String },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("schema conflict on parameter `{name}`: {detail}")]
    SchemaConflict { name: String, detail: String },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("invalid rule `{expression}`: {message}")]
    InvalidRule { expression: String, message: String },

    #[error("conflicting rules on `{name}`: {detail}")]
    RuleConflict { name: String, detail: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("unknown name `{name}`; valid names: {}", valid.join(", "))]
    UnknownName { name: String, valid: Vec<String> },

    #[error("search budget exceeded: {required} model fits required, {allowed} allowed; rank features first to shrink the candidate list")]
    BudgetExceeded { required: u128, allowed: u128 },

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("input `{feature}` is outside the model box by {excess:.3} box widths")]
    Extrapolation { feature: String, excess: f64 },

    #[error("invalid merit function: {0}")]
    InvalidMerit(String),

    #[error("reference point violation: point {point:?} is not strictly better than reference {reference:?}")]
    ReferenceViolation { point: Vec<f64>, reference: Vec<f64> },

    #[error("unsupported objective count {0}; 1 to 3 objectives are supported")]
    UnsupportedDimension(usize),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
