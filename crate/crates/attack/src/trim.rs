//! Coherence-based trajectory compression.
//!
//! A looping run carries three landmarks: the anchor step `o` where the
//! answer was asserted for the third time, the detected loop region, and
//! the final step `m`. The replayable prompt keeps the prefix through `o`,
//! then jumps straight to a loop step that opens with the same word the
//! model pivoted with right after `o` — the direction token — so the
//! splice reads as one coherent chain of thought.

use rentropy_backend::ModelBackend;
use rentropy_core::trace::{LoopDetection, OverReflectionReport};
use serde::{Deserialize, Serialize};

use crate::sampler::{GuidedRun, RunOutcome};
use crate::AttackError;

/// Which end of the loop region the splice scan starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanOrder {
    /// Earliest matching loop step wins (the default).
    Ascending,
    /// Latest matching loop step wins; yields the shortest prompt.
    FromEnd,
}

/// How to measure a prompt's length.
pub enum TokenCounter<'a> {
    /// Count with the backend's own tokenizer.
    Backend(&'a dyn ModelBackend),
    /// Whitespace-delimited word count, for backends without a tokenizer.
    WhitespaceWords,
}

impl TokenCounter<'_> {
    pub fn count(&self, text: &str) -> Result<usize, AttackError> {
        match self {
            TokenCounter::Backend(b) => Ok(b.tokenize(text)?.len()),
            TokenCounter::WhitespaceWords => Ok(text.split_whitespace().count()),
        }
    }
}

/// A trimmed, replayable prompt along with where it was cut from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackPrompt {
    pub id: String,
    /// The prompt: steps `0..=o`, then steps `s..=m`, joined by blank
    /// lines.
    pub text: String,
    /// Anchor step index (the third answer hit).
    pub o: usize,
    /// First retained loop step; always in `o+1 ..= m`.
    pub s: usize,
    /// Last step index of the source trajectory.
    pub m: usize,
    /// First word of step `o + 1`; the splice target.
    pub direction_token: String,
    pub source_run_id: String,
    /// Measured length of `text`.
    pub input_tokens: usize,
}

/// Cuts a looping run down to its prompt.
///
/// The splice index `s` is the first step in the loop region (restricted
/// to steps after the anchor) whose first word equals the direction
/// token; when nothing matches, `s` falls back to the start of that
/// region, which keeps the whole loop as evidence. The function is pure:
/// identical inputs produce identical prompts.
pub fn trim(
    run: &GuidedRun,
    report: &OverReflectionReport,
    loop_info: &LoopDetection,
    source_run_id: &str,
    order: ScanOrder,
    counter: &TokenCounter<'_>,
) -> Result<AttackPrompt, AttackError> {
    if run.outcome != RunOutcome::LoopDetected {
        return Err(AttackError::NothingToTrim(format!(
            "run ended with {}, not a loop",
            run.outcome
        )));
    }
    if !loop_info.found {
        return Err(AttackError::NothingToTrim("no loop evidence".into()));
    }
    let Some(o) = report.o.filter(|_| report.flagged) else {
        return Err(AttackError::NotOverReflecting);
    };

    let steps = &run.final_trace.steps;
    let Some(m) = steps.len().checked_sub(1) else {
        return Err(AttackError::NothingToTrim("the trace has no steps".into()));
    };
    if loop_info.loop_start > m {
        return Err(AttackError::MismatchedInputs(format!(
            "loop start {} outside a trace of {} steps",
            loop_info.loop_start,
            steps.len()
        )));
    }
    if o >= m {
        return Err(AttackError::NothingToTrim(
            "no step follows the anchor".into(),
        ));
    }

    let direction_token = steps[o + 1].first_word().unwrap_or("").to_string();

    // Only loop steps strictly after the anchor are splice candidates;
    // the detected region may reach back to the anchor itself when the
    // answer keeps repeating inside the loop.
    let lo = loop_info.loop_start.max(o + 1);
    let hit = |i: &usize| -> bool {
        !direction_token.is_empty() && steps[*i].first_word() == Some(direction_token.as_str())
    };
    let s = match order {
        ScanOrder::Ascending => (lo..=m).find(hit),
        ScanOrder::FromEnd => (lo..=m).rev().find(hit),
    }
    .unwrap_or(lo);

    let text = steps[..=o]
        .iter()
        .chain(&steps[s..=m])
        .map(|st| st.text.as_str())
        .collect::<Vec<_>>()
        .join("\n\n");
    let input_tokens = counter.count(&text)?;

    Ok(AttackPrompt {
        id: format!("pa-{source_run_id}"),
        text,
        o,
        s,
        m,
        direction_token,
        source_run_id: source_run_id.to_string(),
        input_tokens,
    })
}

/// Prompt length over full-trajectory length, both measured with the same
/// counter. Below 1 whenever the splice actually skipped steps.
pub fn compression_ratio(
    prompt: &AttackPrompt,
    run: &GuidedRun,
    counter: &TokenCounter<'_>,
) -> Result<f64, AttackError> {
    let total = counter.count(&run.final_trace.full_text)?.max(1);
    Ok(prompt.input_tokens as f64 / total as f64)
}
