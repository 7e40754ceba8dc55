use std::fmt;

use thiserror::Error;

/// A single violated config invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("population is empty")]
    EmptyPopulation,
    #[error("population[{id}].entropy = {value} is outside [0, 1]")]
    EntropyOutOfRange { id: String, value: f64 },
    #[error("population id {0:?} is not unique")]
    DuplicateId(String),
    #[error("intervention.activation_start = {start} must be < activation_end = {end}")]
    BadActivationWindow { start: u32, end: u32 },
    #[error("behavior.temperature = {0} must be > 0")]
    NonPositiveTemperature(f64),
    #[error("behavior.smoothing = {0} must be > 0")]
    NonPositiveSmoothing(f64),
    #[error("behavior.{field} = {value} must be finite and >= 0")]
    NegativeParameter { field: &'static str, value: f64 },
    #[error("behavior.feed_size must be >= 1")]
    ZeroFeedSize,
    #[error("intervention.post_period must be >= 1")]
    ZeroPostPeriod,
    #[error("intervention.visibility = {0} is outside [0, 1]")]
    VisibilityOutOfRange(f64),
    #[error("rounds must be >= 1")]
    ZeroRounds,
    #[error("replicates must be >= 1")]
    ZeroReplicates,
}

/// Every violation found in one config.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport(pub Vec<ValidationError>);

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config:")?;
        for e in &self.0 {
            write!(f, "\n  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationReport {}

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("adapter gave no reply within {deadline_ms} ms at round {round}")]
    Timeout { round: u32, deadline_ms: u128 },
    #[error("adapter protocol error at round {round}: {message}")]
    Protocol { round: u32, message: String },
    #[error("adapter i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl AdapterError {
    pub fn round(&self) -> Option<u32> {
        match self {
            AdapterError::Timeout { round, .. } | AdapterError::Protocol { round, .. } => {
                Some(*round)
            }
            AdapterError::Io(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("confusion matrix has zero total count")]
    EmptyConfusion,
    #[error("expected agreement is 1; kappa is undefined")]
    DegenerateMarginals,
    #[error("trace has {0} rounds; at least 2 are required")]
    InsufficientTrace(usize),
    #[error("trace shapes differ: {0}")]
    ShapeMismatch(String),
    #[error("no paired traces supplied")]
    NoTraces,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Validation(#[from] ValidationReport),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("malformed trace: {0}")]
    Trace(String),
}
