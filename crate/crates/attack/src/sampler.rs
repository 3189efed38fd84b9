//! Entropy-guided greedy decoding.
//!
//! Each step queries the model's next-token distribution, looks one token
//! ahead for the top candidates, and picks the candidate whose
//! probability-to-successor-entropy ratio is largest. A high ratio marks a
//! token the model is confident about *and* that leaves it almost nothing
//! to say next — the signature of a trajectory collapsing into repetition.

use rentropy_backend::{BackendError, ModelBackend};
use rentropy_core::dist::{
    recursive_entropy, top_p_renormalize, NextTokenDistribution, RecursiveEntropyRecord, TokenId,
    TokenSequence, DEFAULT_ENTROPY_FLOOR,
};
use rentropy_core::trace::{
    detect_loop, segment, LoopDetection, OverReflectionReport, ReasoningTrace, DEFAULT_MAX_PERIOD,
    DEFAULT_MIN_REPEATS,
};
use serde::{Deserialize, Serialize};

use crate::AttackError;

/// Knobs for one guided run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// How many top candidates to score per step.
    pub top_k: usize,
    /// Nucleus mass used for the successor entropy.
    pub top_p: f64,
    /// Hard cap on emitted tokens.
    pub t_max: usize,
    /// Lower bound for the successor entropy.
    pub entropy_floor: f64,
    /// Tokens between periodic loop checks. A check also fires whenever a
    /// step boundary (double newline) is emitted, so a finished loop is
    /// noticed at the boundary regardless of the interval.
    pub loop_check_interval: usize,
    /// Longest step period the loop detector considers.
    pub max_period: usize,
    /// Full periods required before a repetition counts as a loop.
    pub min_repeats: usize,
    /// When true, the first end-of-thinking selection is replaced by the
    /// next-best candidate instead of failing the run. Off by default:
    /// this is an opt-in extension of the base procedure.
    pub eot_retry_once: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            top_k: 5,
            top_p: 0.99,
            t_max: 512,
            entropy_floor: DEFAULT_ENTROPY_FLOOR,
            loop_check_interval: 16,
            max_period: DEFAULT_MAX_PERIOD,
            min_repeats: DEFAULT_MIN_REPEATS,
            eot_retry_once: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        if self.top_k == 0 {
            return Err(AttackError::InvalidConfig("top_k must be at least 1".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(AttackError::InvalidConfig(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.t_max == 0 {
            return Err(AttackError::InvalidConfig("t_max must be at least 1".into()));
        }
        if !(self.entropy_floor > 0.0 && self.entropy_floor.is_finite()) {
            return Err(AttackError::InvalidConfig(format!(
                "entropy_floor must be finite and positive, got {}",
                self.entropy_floor
            )));
        }
        if self.loop_check_interval == 0 {
            return Err(AttackError::InvalidConfig(
                "loop_check_interval must be at least 1".into(),
            ));
        }
        if self.max_period == 0 {
            return Err(AttackError::InvalidConfig("max_period must be at least 1".into()));
        }
        if self.min_repeats == 0 {
            return Err(AttackError::InvalidConfig("min_repeats must be at least 1".into()));
        }
        Ok(())
    }
}

/// One scored candidate from a step, kept for audits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub token: TokenId,
    /// Candidate probability under the current distribution.
    pub prob: f64,
    /// Clamped entropy of the candidate's successor nucleus.
    pub successor_entropy: f64,
    /// `prob / successor_entropy`; the selection key.
    pub value: f64,
}

impl From<&RecursiveEntropyRecord> for CandidateScore {
    fn from(r: &RecursiveEntropyRecord) -> Self {
        CandidateScore {
            token: r.token,
            prob: r.prob,
            successor_entropy: r.successor_entropy,
            value: r.value,
        }
    }
}

/// Outcome of one step: the chosen record plus the full scored slate.
#[derive(Debug, Clone, PartialEq)]
pub struct StepChoice {
    pub record: RecursiveEntropyRecord,
    /// All scored candidates, in the distribution's canonical order.
    pub candidates: Vec<CandidateScore>,
}

/// Index of the best candidate among those satisfying `keep`: maximal
/// value, ties to higher probability, then to lower token id.
fn select_where<F: Fn(&CandidateScore) -> bool>(
    candidates: &[CandidateScore],
    keep: F,
) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        if !keep(c) {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                let b = &candidates[b];
                c.value > b.value
                    || (c.value == b.value
                        && (c.prob > b.prob || (c.prob == b.prob && c.token < b.token)))
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

/// Scores the top-k candidates after `ctx` and picks the one with the
/// largest recursive-entropy value.
///
/// The k successor distributions are fetched concurrently. When the
/// current distribution carries fewer than `top_k` entries, the available
/// ones are scored and a warning is logged. The returned record's
/// `position` is the absolute context length at query time.
pub fn step(
    backend: &dyn ModelBackend,
    ctx: &TokenSequence,
    cfg: &SamplerConfig,
) -> Result<StepChoice, AttackError> {
    let dist = backend.next_distribution(ctx)?;
    if dist.len() < cfg.top_k {
        log::warn!(
            "distribution at position {} has {} entries, fewer than top_k = {}",
            ctx.len(),
            dist.len(),
            cfg.top_k
        );
    }
    let slate = &dist.entries()[..cfg.top_k.min(dist.len())];

    // One successor lookup per candidate, in parallel; results keep the
    // slate's order.
    let mut successors: Vec<Option<Result<NextTokenDistribution, BackendError>>> =
        (0..slate.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(slate.len());
        for entry in slate {
            let next_ctx = ctx.with_token(entry.token);
            handles.push(scope.spawn(move || backend.next_distribution(&next_ctx)));
        }
        for (slot, handle) in successors.iter_mut().zip(handles) {
            *slot = Some(handle.join().expect("successor lookup panicked"));
        }
    });

    let mut scored = Vec::with_capacity(slate.len());
    for (entry, successor) in slate.iter().zip(successors) {
        let successor = successor.expect("every slot is filled above")?;
        let nucleus = top_p_renormalize(&successor, cfg.top_p)?;
        scored.push(recursive_entropy(
            entry.token,
            entry.prob(),
            &nucleus,
            cfg.entropy_floor,
            ctx.len(),
        ));
    }

    let candidates: Vec<CandidateScore> = scored.iter().map(CandidateScore::from).collect();
    let best = select_where(&candidates, |_| true).expect("slate is non-empty");
    Ok(StepChoice {
        record: scored[best].clone(),
        candidates,
    })
}

/// Why a guided run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    /// The generated steps ended in a detected repetition.
    LoopDetected,
    /// The sampler selected the end-of-thinking token.
    EotFailure,
    /// The iteration cap was reached first.
    BudgetExhausted,
}

impl std::fmt::Display for RunOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunOutcome::LoopDetected => "loop_detected",
            RunOutcome::EotFailure => "eot_failure",
            RunOutcome::BudgetExhausted => "budget_exhausted",
        })
    }
}

/// A completed guided run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidedRun {
    /// The token context the run decoded from.
    pub seed_context: TokenSequence,
    /// Reasoning text the seed ends with (the anchored prefix); the
    /// generated region continues it directly. Empty when decoding from a
    /// bare prompt.
    pub reasoning_prefix: String,
    /// Text decoded by the sampler.
    pub generated_text: String,
    /// Scores of the selected tokens, positions numbered from the start
    /// of the generated region. These are not duplicated into
    /// `final_trace.re_records`.
    pub emitted: Vec<RecursiveEntropyRecord>,
    pub outcome: RunOutcome,
    /// Steps of `reasoning_prefix + generated_text`: the trajectory the
    /// trimmer operates on.
    pub final_trace: ReasoningTrace,
    /// Loop evidence over `final_trace`; present iff the outcome is
    /// `LoopDetected`.
    pub loop_info: Option<LoopDetection>,
    /// Full scored slate per step, kept when auditing.
    pub per_step_candidates: Option<Vec<Vec<CandidateScore>>>,
}

/// A run aborted by an error; whatever was decoded survives here so the
/// harness can persist the partial trajectory.
#[derive(Debug)]
pub struct RunFailure {
    pub error: AttackError,
    pub emitted: Vec<RecursiveEntropyRecord>,
    pub generated_text: String,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "guided run aborted after {} tokens: {}",
            self.emitted.len(),
            self.error
        )
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Decodes from `seed_context` one entropy-guided token at a time until
/// the generated steps loop, the end-of-thinking token is selected, or
/// `t_max` tokens have been emitted.
///
/// Loop checks re-segment the generated region only; they run every
/// `loop_check_interval` tokens and at every emitted step boundary. The
/// returned trace spans `reasoning_prefix + generated_text` so step
/// indices line up with the trace the prefix came from.
pub fn run(
    backend: &dyn ModelBackend,
    seed_context: &TokenSequence,
    reasoning_prefix: &str,
    cfg: &SamplerConfig,
    audit: bool,
) -> Result<GuidedRun, RunFailure> {
    let abort = |error: AttackError, emitted: Vec<RecursiveEntropyRecord>, text: String| {
        Err(RunFailure {
            error,
            emitted,
            generated_text: text,
        })
    };
    if let Err(e) = cfg.validate() {
        return abort(e, Vec::new(), String::new());
    }
    if seed_context.is_empty() {
        return abort(
            AttackError::InvalidConfig("seed context must be non-empty".into()),
            Vec::new(),
            String::new(),
        );
    }

    let eot = backend.descriptor().eot_token;
    let mut ctx = seed_context.clone();
    let mut emitted: Vec<RecursiveEntropyRecord> = Vec::new();
    let mut audit_log = audit.then(Vec::new);
    let mut generated = String::new();
    let mut outcome = None;
    let mut since_check = 0usize;
    let mut eot_retries = usize::from(cfg.eot_retry_once);

    while emitted.len() < cfg.t_max {
        let choice = match step(backend, &ctx, cfg) {
            Ok(c) => c,
            Err(e) => return abort(e, emitted, generated),
        };
        let mut record = choice.record;
        if let Some(log) = audit_log.as_mut() {
            log.push(choice.candidates.clone());
        }

        if record.token == eot && eot_retries > 0 {
            if let Some(i) = select_where(&choice.candidates, |c| c.token != eot) {
                eot_retries -= 1;
                let c = &choice.candidates[i];
                log::info!(
                    "substituting next-best candidate {} for end-of-thinking at step {}",
                    c.token,
                    emitted.len()
                );
                record = RecursiveEntropyRecord {
                    token: c.token,
                    prob: c.prob,
                    successor_entropy: c.successor_entropy,
                    value: c.value,
                    position: record.position,
                };
            }
        }

        // Renumber from the start of the generated region.
        record.position = emitted.len();
        let token = record.token;
        emitted.push(record);

        if token == eot {
            outcome = Some(RunOutcome::EotFailure);
            break;
        }

        let piece = match backend.detokenize(&[token]) {
            Ok(p) => p,
            Err(e) => return abort(e.into(), emitted, generated),
        };
        ctx.push(token);
        since_check += 1;

        // A step boundary may straddle the previous piece and this one.
        let boundary = {
            let mut junction = String::new();
            if generated.ends_with('\n') {
                junction.push('\n');
            }
            junction.push_str(&piece);
            junction.contains("\n\n")
        };
        generated.push_str(&piece);

        if boundary || since_check >= cfg.loop_check_interval {
            since_check = 0;
            let trace = segment(&generated);
            if detect_loop(&trace, cfg.max_period, cfg.min_repeats).found {
                outcome = Some(RunOutcome::LoopDetected);
                break;
            }
        }
    }

    let outcome = outcome.unwrap_or(RunOutcome::BudgetExhausted);
    let full_text = format!("{reasoning_prefix}{generated}");
    let final_trace = segment(&full_text);
    let loop_info = if outcome == RunOutcome::LoopDetected {
        // A loop at the end of the generated region is a suffix property,
        // so it survives re-segmentation with the prefix attached.
        let on_final = detect_loop(&final_trace, cfg.max_period, cfg.min_repeats);
        debug_assert!(on_final.found, "suffix loop lost when prefix was attached");
        on_final.found.then_some(on_final)
    } else {
        None
    };

    Ok(GuidedRun {
        seed_context: seed_context.clone(),
        reasoning_prefix: reasoning_prefix.to_string(),
        generated_text: generated,
        emitted,
        outcome,
        final_trace,
        loop_info,
        per_step_candidates: audit_log,
    })
}

/// A decoding seed: the rendered question followed by the reasoning
/// prefix that ends at the anchor step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedPlan {
    /// `tokens(question) ⊕ tokens(reasoning prefix)`.
    pub tokens: TokenSequence,
    /// The trace text up to the end of the anchor step, byte-exact,
    /// with the original inter-step delimiters preserved.
    pub reasoning_prefix: String,
    /// Index of the anchor step (the third answer hit).
    pub anchor: usize,
}

/// Builds the guided-decoding seed from a flagged trace: the question
/// text, then the reasoning up to and including the anchor step. The seed
/// ends exactly at the anchor step's last byte, so decoding resumes
/// mid-trajectory at the point where the model had already asserted the
/// answer three times.
pub fn build_seed(
    backend: &dyn ModelBackend,
    question_text: &str,
    trace: &ReasoningTrace,
    report: &OverReflectionReport,
) -> Result<SeedPlan, AttackError> {
    let Some(anchor) = report.o.filter(|_| report.flagged) else {
        return Err(AttackError::NotOverReflecting);
    };
    let Some(step) = trace.steps.get(anchor) else {
        return Err(AttackError::MismatchedInputs(format!(
            "anchor step {anchor} outside a trace of {} steps",
            trace.steps.len()
        )));
    };
    let reasoning_prefix = trace.full_text[..step.span.1].to_string();
    let question_tokens = backend.tokenize(question_text)?;
    let prefix_tokens = backend.tokenize(&reasoning_prefix)?;
    Ok(SeedPlan {
        tokens: question_tokens.concat(&prefix_tokens),
        reasoning_prefix,
        anchor,
    })
}
