//! Reasoning-trace structure: segmentation into steps, detection of
//! repeated assertions of a question's answer, and detection of verbatim
//! step-level loops at the end of a trace.

use serde::{Deserialize, Serialize};

use crate::counterfactual::{canonicalize, BasicQuestion, Canonical};
use crate::dist::RecursiveEntropyRecord;

/// Number of answer-bearing steps at which a trace counts as
/// over-reflecting.
pub const OVER_REFLECTION_THRESHOLD: usize = 3;

/// Longest step period considered by [`detect_loop`] by default.
pub const DEFAULT_MAX_PERIOD: usize = 8;

/// Fewest full period repetitions required by [`detect_loop`] by default.
pub const DEFAULT_MIN_REPEATS: usize = 2;

/// One reasoning step: a blank-line-delimited block of the trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub text: String,
    /// Byte range of `text` within the owning trace's `full_text`.
    pub span: (usize, usize),
}

impl Step {
    /// First whitespace-delimited word of the step, if any.
    pub fn first_word(&self) -> Option<&str> {
        self.text.split_whitespace().next()
    }
}

/// A reasoning trace with its step decomposition and, when produced by a
/// scored decode, the per-token recursive-entropy records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub full_text: String,
    pub steps: Vec<Step>,
    #[serde(default)]
    pub re_records: Option<Vec<RecursiveEntropyRecord>>,
}

/// Splits text into steps on runs of two or more newlines.
///
/// A run of any length is a single delimiter, single newlines stay inside
/// their step, and empty pieces (leading or trailing delimiters) are
/// dropped. Step spans index into the original text unchanged.
pub fn segment(full_text: &str) -> ReasoningTrace {
    let bytes = full_text.as_bytes();
    let mut steps = Vec::new();
    let mut piece_start = 0usize;
    let mut i = 0usize;
    while i < bytes.len() {
        if bytes[i] == b'\n' {
            let run_start = i;
            let mut run_end = i + 1;
            while run_end < bytes.len() && bytes[run_end] == b'\n' {
                run_end += 1;
            }
            if run_end - run_start >= 2 {
                if run_start > piece_start {
                    steps.push(Step {
                        text: full_text[piece_start..run_start].to_string(),
                        span: (piece_start, run_start),
                    });
                }
                piece_start = run_end;
            }
            i = run_end;
        } else {
            i += 1;
        }
    }
    if piece_start < bytes.len() {
        steps.push(Step {
            text: full_text[piece_start..].to_string(),
            span: (piece_start, bytes.len()),
        });
    }
    ReasoningTrace {
        full_text: full_text.to_string(),
        steps,
        re_records: None,
    }
}

fn word_bounded(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let mut from = 0usize;
    while let Some(off) = haystack[from..].find(needle) {
        let start = from + off;
        let end = start + needle.len();
        let prev_ok = haystack[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let next_ok = haystack[end..]
            .chars()
            .next()
            .is_none_or(|c| !c.is_alphanumeric());
        if prev_ok && next_ok {
            return true;
        }
        from = start + 1;
    }
    false
}

/// Pulls every standalone numeral out of `text`, in canonical form.
///
/// A numeral may not extend a longer one on either side: adjacent digits,
/// a decimal point, or digit-grouping commas all fuse into a single
/// numeral, so "900", "90.5", "0.90" and "1,090" each yield one value and
/// none of them contains a 90. Grouping commas are understood ("1,234"
/// reads as 1234); a sentence-ending dot after the digits does not attach.
fn extract_numerals(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let digit_at = |i: usize| i < n && chars[i].1.is_ascii_digit();
    let mut out = Vec::new();
    let mut i = 0usize;
    while i < n {
        let c = chars[i].1;
        let negative = c == '-' && digit_at(i + 1);
        if !(c.is_ascii_digit() || negative) {
            i += 1;
            continue;
        }
        // The numeral may not continue something: no digit, letter, or
        // decimal point directly before it, and no grouping comma that
        // itself follows a digit.
        if i > 0 {
            let prev = chars[i - 1].1;
            if prev.is_alphanumeric() || prev == '.' {
                i += 1;
                continue;
            }
            if prev == ',' && i >= 2 && chars[i - 2].1.is_ascii_digit() {
                i += 1;
                continue;
            }
        }
        let start = i;
        let mut j = if negative { i + 1 } else { i };
        while digit_at(j) {
            j += 1;
        }
        // Grouping commas: a comma binds only when followed by exactly
        // three digits.
        while j < n
            && chars[j].1 == ','
            && digit_at(j + 1)
            && digit_at(j + 2)
            && digit_at(j + 3)
            && !digit_at(j + 4)
        {
            j += 4;
        }
        if j < n && chars[j].1 == '.' && digit_at(j + 1) {
            j += 1;
            while digit_at(j) {
                j += 1;
            }
        }
        // Reject when the tail fuses onward: "90x", "1,23", "1.2.3".
        let mut valid = true;
        if j < n {
            let next = chars[j].1;
            if next.is_alphanumeric() {
                valid = false;
            }
            if (next == '.' || next == ',') && digit_at(j + 1) {
                valid = false;
            }
        }
        if valid {
            let end = if j < n { chars[j].0 } else { text.len() };
            let raw: String = text[chars[start].0..end].replace(',', "");
            if let Canonical::Number(canon) = canonicalize(&raw) {
                out.push(canon);
            }
        }
        i = j.max(i + 1);
    }
    out
}

/// Does this step assert the question's answer?
///
/// Numeric answers match when the step contains a standalone numeral that
/// canonically equals the answer (see [`extract_numerals`]): an answer of
/// `90` hits "make 90 small bags." but not "900", "90.5", or "1,090".
/// Textual answers match case-insensitively at word boundaries.
pub fn fact_hit(step_text: &str, question: &BasicQuestion) -> bool {
    match canonicalize(&question.answer) {
        Canonical::Number(target) => extract_numerals(step_text).iter().any(|c| *c == target),
        Canonical::Text(t) => {
            let hay = step_text.to_lowercase();
            word_bounded(&hay, &t)
        }
    }
}

/// Which steps assert the answer, and whether that crossed the
/// over-reflection threshold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverReflectionReport {
    /// Indices of answer-bearing steps, ascending.
    pub hit_indices: Vec<usize>,
    pub flagged: bool,
    /// Index of the step at which the threshold was crossed (the third
    /// hit), present only when flagged.
    pub o: Option<usize>,
}

/// Scans a trace for repeated assertions of the answer. Three hits flag
/// the trace; `o` is the step index of the third hit.
pub fn over_reflection(trace: &ReasoningTrace, question: &BasicQuestion) -> OverReflectionReport {
    let hit_indices: Vec<usize> = trace
        .steps
        .iter()
        .enumerate()
        .filter(|(_, s)| fact_hit(&s.text, question))
        .map(|(i, _)| i)
        .collect();
    let flagged = hit_indices.len() >= OVER_REFLECTION_THRESHOLD;
    let o = flagged.then(|| hit_indices[OVER_REFLECTION_THRESHOLD - 1]);
    OverReflectionReport {
        hit_indices,
        flagged,
        o,
    }
}

/// Result of suffix loop detection over a trace's steps.
///
/// When `found` is false the remaining fields are zeroed. When true,
/// `period` is the smallest step period that repeats at least the required
/// number of times at the end of the trace, `loop_start` is the index of
/// the first step inside the repeating suffix, and `evidence` lists the
/// step index pairs whose normalized texts matched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopDetection {
    pub found: bool,
    pub period: usize,
    pub loop_start: usize,
    pub evidence: Vec<(usize, usize)>,
}

impl LoopDetection {
    pub fn none() -> Self {
        LoopDetection {
            found: false,
            period: 0,
            loop_start: 0,
            evidence: Vec::new(),
        }
    }
}

/// Normalization applied before comparing steps: whitespace runs collapse
/// to one space, leading and trailing whitespace goes away, and a space
/// directly before closing punctuation is dropped.
pub fn normalize_step(text: &str) -> String {
    let mut collapsed = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_whitespace() {
            pending_space = !collapsed.is_empty();
        } else {
            if pending_space {
                if !matches!(c, '.' | ',' | ';' | ':' | '!' | '?') {
                    collapsed.push(' ');
                }
                pending_space = false;
            }
            collapsed.push(c);
        }
    }
    collapsed
}

/// Looks for an exact periodic repetition at the end of the trace.
///
/// For each candidate period `p` from 1 to `max_period`, the longest
/// suffix in which every step equals the step `p` positions later
/// (after [`normalize_step`]) is measured; the loop is reported for the
/// smallest `p` whose suffix holds at least `min_repeats` full periods.
pub fn detect_loop(trace: &ReasoningTrace, max_period: usize, min_repeats: usize) -> LoopDetection {
    assert!(min_repeats >= 1, "min_repeats must be at least 1");
    let norm: Vec<String> = trace
        .steps
        .iter()
        .map(|s| normalize_step(&s.text))
        .collect();
    let n = norm.len();
    for p in 1..=max_period {
        if p.saturating_mul(min_repeats) > n {
            continue;
        }
        // Count, from the end, how many steps equal their p-successor.
        let mut matched = 0usize;
        while matched < n - p && norm[n - p - 1 - matched] == norm[n - 1 - matched] {
            matched += 1;
        }
        let suffix_len = matched + p;
        if suffix_len / p >= min_repeats {
            let loop_start = n - suffix_len;
            let evidence = (loop_start..n - p).map(|i| (i, i + p)).collect();
            return LoopDetection {
                found: true,
                period: p,
                loop_start,
                evidence,
            };
        }
    }
    LoopDetection::none()
}
