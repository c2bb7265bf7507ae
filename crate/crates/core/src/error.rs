use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("feature `{feature}`: value {value} outside [{min}, {max}]")]
    OutOfRange {
        feature: String,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("feature `{feature}`: unknown category {text:?}")]
    UnknownCategory { feature: String, text: String },

    #[error("invalid fields: {}", format_field_errors(.0))]
    InvalidFields(Vec<FieldError>),

    #[error("unknown feature `{0}`")]
    UnknownFeature(String),

    #[error("feature `{feature}`: negative days since admission ({days})")]
    NegativeObservationDay { feature: String, days: i64 },

    #[error("{malformed} of {total} rows malformed (limit 10%); first: {first}")]
    TooManyMalformedRows {
        malformed: usize,
        total: usize,
        first: String,
    },

    #[error("censoring tuning could not reach event fraction {target:.3} (achieved {achieved:.3})")]
    CensoringTargetUnreachable { target: f64, achieved: f64 },

    #[error("feature `{0}` has no observed values")]
    NoObservedValues(String),

    #[error("column `{0}` has zero variance")]
    ZeroVariance(String),

    #[error("need at least {required} events, found {found}")]
    TooFewEvents { required: usize, found: usize },

    #[error(
        "no convergence after {iterations} iterations (max |gradient| {gradient_norm:.3e}): {diagnostic}"
    )]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
        last_iterate: Vec<f64>,
        diagnostic: String,
    },

    #[error("non-finite gradient at boosting iteration {iteration}")]
    NonFiniteGradient { iteration: usize },

    #[error("expected {expected} features, got {found}")]
    FeatureCountMismatch { expected: usize, found: usize },

    #[error("{metric} is undefined: {reason}")]
    Undefined { metric: &'static str, reason: String },

    #[error("censoring survival is zero at t = {time} (tau = {tau:?})")]
    ZeroCensoringWeight { time: f64, tau: Option<f64> },

    #[error("labels contain a single class")]
    SingleClass,

    #[error("every row is censored before horizon {0} days")]
    AllRowsExcluded(u32),

    #[error("scaler horizon {scaler} days does not match requested {requested} days")]
    HorizonMismatch { scaler: u32, requested: u32 },

    #[error("tree node {node} has no cover; explanations need a model trained by this crate")]
    MissingCover { node: usize },

    #[error("feature `{0}` is constant")]
    ConstantFeature(String),

    #[error("bundle schema version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("bundle checksum mismatch (file truncated or corrupted)")]
    ChecksumMismatch,

    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

/// One offending field of a record, used when every problem must be reported
/// at once (ingestion, HTTP validation).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

fn format_field_errors(errors: &[FieldError]) -> String {
    errors
        .iter()
        .map(|e| format!("{}: {}", e.field, e.message))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn undefined(metric: &'static str, reason: impl Into<String>) -> Self {
        Error::Undefined {
            metric,
            reason: reason.into(),
        }
    }
}
