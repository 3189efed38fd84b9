//! Replay a trimmed prompt against a backend and measure the damage.
//!
//! Replays never fail as function calls: a backend error is recorded in
//! the report so batch drivers can keep going and account for every
//! prompt.

use rentropy_backend::{FinishReason, ModelBackend};
use rentropy_core::trace::{detect_loop, segment, LoopDetection};
use serde::{Deserialize, Serialize};

use crate::trim::AttackPrompt;

/// What a single replayed prompt did to the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub prompt_id: String,
    /// Backend label: the kind, plus the endpoint when there is one.
    pub backend: String,
    /// Reasoning tokens the replay produced.
    pub reasoning_tokens: usize,
    /// How generation stopped; absent when the request errored.
    pub finish_reason: Option<FinishReason>,
    /// Loop evidence over the replayed reasoning.
    pub loop_info: LoopDetection,
    /// `reasoning_tokens` relative to the stored baseline for the same
    /// question. Meaningful only when `error` is absent.
    pub amplification: f64,
    /// Backend error, when the request failed.
    pub error: Option<String>,
}

/// Replays arbitrary prompt text and scores the output.
#[allow(clippy::too_many_arguments)]
pub fn replay_text(
    backend: &dyn ModelBackend,
    prompt_id: &str,
    text: &str,
    max_tokens: usize,
    temperature: f64,
    baseline_reasoning_tokens: usize,
    max_period: usize,
    min_repeats: usize,
) -> ReplayReport {
    let descriptor = backend.descriptor();
    let label = match &descriptor.endpoint {
        Some(endpoint) => format!("{} {endpoint}", descriptor.kind),
        None => descriptor.kind.to_string(),
    };
    match backend.generate(text, max_tokens, temperature) {
        Ok(result) => {
            let trace = segment(result.analysis_text());
            let loop_info = detect_loop(&trace, max_period, min_repeats);
            // A zero-token baseline would make the ratio meaningless;
            // clamp it to one token.
            let amplification =
                result.n_reasoning_tokens as f64 / baseline_reasoning_tokens.max(1) as f64;
            ReplayReport {
                prompt_id: prompt_id.to_string(),
                backend: label,
                reasoning_tokens: result.n_reasoning_tokens,
                finish_reason: Some(result.finish_reason),
                loop_info,
                amplification,
                error: None,
            }
        }
        Err(e) => ReplayReport {
            prompt_id: prompt_id.to_string(),
            backend: label,
            reasoning_tokens: 0,
            finish_reason: None,
            loop_info: LoopDetection::none(),
            amplification: 0.0,
            error: Some(e.to_string()),
        },
    }
}

/// Replays a trimmed prompt. Pass temperature 0 for the stable, greedy
/// form of the attack.
pub fn replay(
    backend: &dyn ModelBackend,
    prompt: &AttackPrompt,
    max_tokens: usize,
    temperature: f64,
    baseline_reasoning_tokens: usize,
    max_period: usize,
    min_repeats: usize,
) -> ReplayReport {
    replay_text(
        backend,
        &prompt.id,
        &prompt.text,
        max_tokens,
        temperature,
        baseline_reasoning_tokens,
        max_period,
        min_repeats,
    )
}
