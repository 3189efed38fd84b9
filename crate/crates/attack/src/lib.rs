//! Entropy-guided decoding that drives a model into repetitive reasoning,
//! plus the tooling to compress and replay the result.
//!
//! The pipeline: [`sampler::build_seed`] turns a flagged reasoning trace
//! into a decoding seed, [`sampler::run`] decodes greedily by recursive
//! entropy until the output loops (or fails), [`trim::trim`] cuts the
//! looping trajectory down to a compact prompt, and [`replay::replay`]
//! feeds that prompt back to a backend and measures what happens.

pub mod replay;
pub mod sampler;
pub mod trim;

use rentropy_backend::BackendError;
use rentropy_core::CoreError;
use thiserror::Error;

pub use replay::{replay, replay_text, ReplayReport};
pub use sampler::{
    build_seed, run, step, CandidateScore, GuidedRun, RunFailure, RunOutcome, SamplerConfig,
    SeedPlan, StepChoice,
};
pub use trim::{compression_ratio, trim, AttackPrompt, ScanOrder, TokenCounter};

/// Errors from seed construction, guided decoding, and trimming.
#[derive(Debug, Error)]
pub enum AttackError {
    /// The trace never crossed the repeated-answer threshold, so there is
    /// no anchor step to build from.
    #[error("trace is not over-reflecting; no anchor step to cut at")]
    NotOverReflecting,

    /// The run cannot be compressed into a prompt.
    #[error("nothing to trim: {0}")]
    NothingToTrim(String),

    /// A sampler parameter is out of range.
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),

    /// Inputs that must describe the same trajectory disagree.
    #[error("mismatched inputs: {0}")]
    MismatchedInputs(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Backend(#[from] BackendError),
}
