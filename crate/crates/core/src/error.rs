use thiserror::Error;

/// Errors produced by the numeric and text-analysis primitives.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Logit input was empty or contained NaN / infinities.
    #[error("invalid logits: {0}")]
    InvalidLogits(String),

    /// A distribution failed a structural invariant (empty, duplicate ids,
    /// non-finite log-probabilities, or untruncated mass far from one).
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    /// Top-p requested more mass than a truncated distribution carries.
    #[error("insufficient mass for top-p: have {available}, need {requested}")]
    InsufficientMass { available: f64, requested: f64 },

    /// The nucleus threshold must lie in (0, 1].
    #[error("top-p threshold out of range: {0}")]
    InvalidTopP(f64),

    /// A question failed validation (empty answer, options missing the
    /// answer, and so on).
    #[error("invalid question: {0}")]
    InvalidQuestion(String),

    /// Could not synthesize the requested number of distinct incorrect
    /// answers within the retry budget.
    #[error("cannot perturb answer: {0}")]
    CannotPerturb(String),

    /// A prompt template was malformed (missing a required placeholder).
    #[error("invalid template: {0}")]
    InvalidTemplate(String),

    /// Trend analysis needs at least two full groups of records.
    #[error("insufficient data: {records} records, need at least {needed}")]
    InsufficientData { records: usize, needed: usize },

    /// A record series violated a value invariant (non-positive or
    /// non-finite entries, degenerate positions).
    #[error("invalid records: {0}")]
    InvalidRecords(String),
}
