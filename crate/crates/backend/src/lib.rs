//! Model backends.
//!
//! Everything upstream talks to a [`ModelBackend`]: a source of next-token
//! distributions and completions. Two implementations ship here:
//!
//! * [`mock::MockBackend`] — deterministic scripted models loaded from
//!   JSON (a context-keyed logit table or a Markov chain), used for every
//!   offline experiment and test;
//! * [`wire::WireBackend`] — a blocking HTTP client for servers that
//!   expose the distribution/generation endpoints.

pub mod mock;
pub mod vocab;
pub mod wire;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use rentropy_core::dist::{NextTokenDistribution, TokenId, TokenSequence};
use rentropy_core::CoreError;

#[derive(Debug, Error)]
pub enum BackendError {
    /// The backend cannot be reached at all (network refused, timeout).
    #[error("backend unavailable: {0}")]
    Unavailable(String),

    /// The server rejected the context as too long.
    #[error("context overflow: {0}")]
    ContextOverflow(String),

    /// A wire response could not be parsed or failed validation.
    #[error("malformed wire response: {0}")]
    WireFormat(String),

    /// A scripted model file is structurally invalid.
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// The request itself was malformed (empty prompt, out-of-range ids).
    #[error("invalid request: {0}")]
    InvalidRequest(String),

    /// This backend cannot perform the operation.
    #[error("unsupported operation: {0}")]
    Unsupported(&'static str),

    /// The tokenizer met text no vocabulary entry covers.
    #[error("untokenizable text at byte {at}: {snippet:?}")]
    UnknownText { at: usize, snippet: String },

    /// A token id has no vocabulary entry.
    #[error("unknown token id {0}")]
    UnknownToken(TokenId),

    /// A scripted model has no row for the requested context.
    #[error("no scripted row for context key {0:?}")]
    MissingRow(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

/// What kind of backend this is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    #[serde(rename = "mock-table")]
    MockTable,
    #[serde(rename = "mock-markov")]
    MockMarkov,
    #[serde(rename = "wire")]
    Wire,
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendKind::MockTable => "mock-table",
            BackendKind::MockMarkov => "mock-markov",
            BackendKind::Wire => "wire",
        })
    }
}

/// Static facts about a backend, fixed at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub vocab_size: usize,
    /// The end-of-thinking token; selecting it terminates reasoning.
    pub eot_token: TokenId,
    /// Where a wire backend points; mocks leave this empty.
    pub endpoint: Option<String>,
    /// How many entries a distribution request returns at most.
    pub top_n: usize,
    /// Temperature applied to distribution queries.
    pub temperature: f64,
}

impl BackendDescriptor {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.vocab_size == 0 {
            return Err(BackendError::InvalidModel("vocab_size must be > 0".into()));
        }
        if self.eot_token.index() >= self.vocab_size {
            return Err(BackendError::InvalidModel(format!(
                "eot token {} outside vocabulary of {}",
                self.eot_token, self.vocab_size
            )));
        }
        if self.top_n == 0 {
            return Err(BackendError::InvalidModel("top_n must be > 0".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(BackendError::InvalidModel(format!(
                "temperature {} must be finite and non-negative",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Why a generation stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    /// The model emitted its end-of-thinking token.
    Eot,
    /// The token cap was reached.
    Length,
    /// The server reported a generation-side failure.
    Error,
}

impl std::str::FromStr for FinishReason {
    type Err = BackendError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "eot" => Ok(FinishReason::Eot),
            "length" => Ok(FinishReason::Length),
            "error" => Ok(FinishReason::Error),
            other => Err(BackendError::WireFormat(format!(
                "unknown finish_reason {other:?}"
            ))),
        }
    }
}

/// A completed generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    /// Full response text.
    pub text: String,
    /// The reasoning portion, when the backend separates it.
    pub reasoning_text: Option<String>,
    /// Number of reasoning tokens produced.
    pub n_reasoning_tokens: usize,
    pub finish_reason: FinishReason,
}

impl GenerationResult {
    /// The text to analyze: the reasoning portion when present, otherwise
    /// the whole response.
    pub fn analysis_text(&self) -> &str {
        self.reasoning_text.as_deref().unwrap_or(&self.text)
    }
}

/// A source of next-token distributions and completions.
///
/// Implementations must be deterministic given their construction
/// parameters: the same context always yields the same distribution and
/// the same generate call the same completion.
pub trait ModelBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Distribution over the next token after `ctx`, at the descriptor's
    /// temperature, carrying at most `top_n` entries.
    fn next_distribution(&self, ctx: &TokenSequence) -> Result<NextTokenDistribution, BackendError>;

    /// Completes `prompt`, stopping at the end-of-thinking token or after
    /// `max_tokens` tokens.
    fn generate(
        &self,
        prompt: &str,
        max_tokens: usize,
        temperature: f64,
    ) -> Result<GenerationResult, BackendError>;

    /// Text to tokens. Wire backends do not support this.
    fn tokenize(&self, text: &str) -> Result<TokenSequence, BackendError>;

    /// Tokens to text. Wire backends do not support this.
    fn detokenize(&self, tokens: &[TokenId]) -> Result<String, BackendError>;
}
