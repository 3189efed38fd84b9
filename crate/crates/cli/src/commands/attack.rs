//! `rentropy attack`: the full pipeline, one question at a time.
//!
//! Render a counterfactual prompt, let the model answer it, look for
//! over-reflection in the reasoning, seed the guided sampler at the
//! anchor step, decode until the trace loops (or fails), and trim the
//! looping trajectory into a replayable prompt. Per-question failures
//! become status lines; only an unreachable backend aborts the batch.

use std::path::PathBuf;
use std::str::FromStr;

use anyhow::Result;
use clap::Args;
use rentropy_attack::{
    build_seed, run as guided_run, trim, AttackPrompt, ScanOrder, TokenCounter,
};
use rentropy_backend::BackendKind;
use rentropy_core::counterfactual::{construct, synthesize_incorrect, BasicQuestion, Variant};
use rentropy_core::trace::{over_reflection, segment};

use crate::config::{item_seed, LoadedConfig};
use crate::store::{self, QuestionRecord, RunEvent, StatusRecord};

use super::{attack_unavailable, backend_unavailable, ensure_out_dir};

pub(super) fn parse_scan(s: &str) -> Result<ScanOrder, String> {
    match s {
        "ascending" => Ok(ScanOrder::Ascending),
        "from-end" | "from_end" => Ok(ScanOrder::FromEnd),
        other => Err(format!(
            "unknown scan order {other:?} (expected ascending or from-end)"
        )),
    }
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    /// Question file (JSONL); defaults to `[fixtures] questions`.
    #[arg(long)]
    pub questions: Option<PathBuf>,
    /// Prompt form driving the pipeline.
    #[arg(long, default_value = "directed", value_parser = Variant::from_str)]
    pub variant: Variant,
    /// Keep the full scored candidate slate of every emitted token.
    #[arg(long)]
    pub audit: bool,
    /// Extension, off by default: when the guided pick is the
    /// end-of-thinking token, substitute the next-best candidate once per
    /// run instead of failing.
    #[arg(long)]
    pub eot_retry: bool,
    /// Splice-point scan direction for trimming.
    #[arg(long, default_value = "ascending", value_parser = parse_scan)]
    pub scan: ScanOrder,
}

pub fn run(args: &AttackArgs, cfg: &LoadedConfig) -> Result<()> {
    let out_dir = ensure_out_dir(cfg)?;
    anyhow::ensure!(
        cfg.config.backend.kind != BackendKind::Wire,
        "guided decoding needs a token-level backend; wire backends cannot tokenize"
    );
    let backend = cfg.build_backend()?;
    let questions: Vec<QuestionRecord> =
        store::read_jsonl(&cfg.questions_path(args.questions.as_deref())?)?;
    let templates = cfg.config.templates.to_template_set();
    let n_incorrect = cfg.config.counterfactual.n_incorrect;
    let gen = &cfg.config.generation;
    let mut sampler_cfg = cfg.config.sampler.to_sampler_config();
    sampler_cfg.eot_retry_once = sampler_cfg.eot_retry_once || args.eot_retry;
    let counter = TokenCounter::Backend(backend.as_ref());

    let mut events: Vec<RunEvent> = Vec::new();
    let mut prompts: Vec<AttackPrompt> = Vec::new();
    let mut statuses: Vec<StatusRecord> = Vec::new();
    let mut n_flagged = 0usize;
    let mut n_loops = 0usize;

    for q in &questions {
        let run_id = format!("run-{}-{}", q.id, args.variant);
        let fail = |status: &str, detail: String, statuses: &mut Vec<StatusRecord>| {
            statuses.push(StatusRecord {
                id: run_id.clone(),
                status: status.into(),
                detail: Some(detail),
            });
        };

        let question = BasicQuestion {
            stem: q.stem.clone(),
            answer: q.answer.clone(),
            options: q.options.clone(),
        };
        let seed = item_seed(cfg.config.seed, &q.id);

        // 1. Render the prompt.
        let incorrect = if args.variant == Variant::Directed {
            match synthesize_incorrect(&question, n_incorrect, seed) {
                Ok(set) => Some(set),
                Err(e) => {
                    fail("error", e.to_string(), &mut statuses);
                    continue;
                }
            }
        } else {
            None
        };
        let qc = match construct(&question, args.variant, incorrect.as_ref(), seed, &templates) {
            Ok(qc) => qc,
            Err(e) => {
                fail("error", e.to_string(), &mut statuses);
                continue;
            }
        };

        // 2. Benign generation.
        let base = match backend.generate(&qc.rendered, gen.max_tokens, gen.temperature) {
            Ok(g) => g,
            Err(e) if backend_unavailable(&e) => return Err(e.into()),
            Err(e) => {
                fail("error", e.to_string(), &mut statuses);
                continue;
            }
        };
        let trace = segment(base.analysis_text());

        // 3. Over-reflection gate.
        let report = over_reflection(&trace, &question);
        if !report.flagged {
            fail(
                "not_over_reflecting",
                format!("{} answer-bearing steps", report.hit_indices.len()),
                &mut statuses,
            );
            continue;
        }
        n_flagged += 1;

        // 4. Seed and guide.
        let plan = match build_seed(backend.as_ref(), &qc.rendered, &trace, &report) {
            Ok(p) => p,
            Err(e) if attack_unavailable(&e) => return Err(e.into()),
            Err(e) => {
                fail("error", e.to_string(), &mut statuses);
                continue;
            }
        };
        let guided = match guided_run(
            backend.as_ref(),
            &plan.tokens,
            &plan.reasoning_prefix,
            &sampler_cfg,
            args.audit,
        ) {
            Ok(r) => r,
            Err(failure) => {
                for r in &failure.emitted {
                    events.push(RunEvent::Step {
                        run_id: run_id.clone(),
                        position: r.position,
                        selected_token: r.token.0,
                        prob: r.prob,
                        h_c: r.successor_entropy,
                        h_r: r.value,
                    });
                }
                events.push(RunEvent::Outcome {
                    run_id: run_id.clone(),
                    value: "error".into(),
                });
                if attack_unavailable(&failure.error) {
                    return Err(failure.into());
                }
                fail("error", failure.to_string(), &mut statuses);
                continue;
            }
        };
        for r in &guided.emitted {
            events.push(RunEvent::Step {
                run_id: run_id.clone(),
                position: r.position,
                selected_token: r.token.0,
                prob: r.prob,
                h_c: r.successor_entropy,
                h_r: r.value,
            });
        }
        events.push(RunEvent::Outcome {
            run_id: run_id.clone(),
            value: guided.outcome.to_string(),
        });
        events.push(RunEvent::RunSnapshot {
            run_id: run_id.clone(),
            question_id: q.id.clone(),
            prompt_text: qc.rendered.clone(),
            baseline_tokens: base.n_reasoning_tokens,
            report: report.clone(),
            run: guided.clone(),
        });

        // 5. Trim loops into prompts.
        let Some(loop_info) = guided.loop_info.clone() else {
            statuses.push(StatusRecord {
                id: run_id.clone(),
                status: guided.outcome.to_string(),
                detail: None,
            });
            continue;
        };
        n_loops += 1;
        match trim(&guided, &report, &loop_info, &run_id, args.scan, &counter) {
            Ok(prompt) => {
                statuses.push(StatusRecord {
                    id: run_id.clone(),
                    status: "loop_detected".into(),
                    detail: Some(format!("prompt {}", prompt.id)),
                });
                prompts.push(prompt);
            }
            Err(e) => fail("trim_error", e.to_string(), &mut statuses),
        }
    }

    store::write_jsonl(&out_dir.join("runs.jsonl"), &events)?;
    store::write_jsonl(&out_dir.join("prompts.jsonl"), &prompts)?;
    store::write_jsonl(&out_dir.join("attack_status.jsonl"), &statuses)?;

    #[derive(serde::Serialize)]
    struct Summary {
        questions: usize,
        over_reflecting: usize,
        over_reflection_rate: f64,
        loops: usize,
        loop_rate: f64,
        prompts: usize,
    }
    let n = questions.len();
    let summary = Summary {
        questions: n,
        over_reflecting: n_flagged,
        over_reflection_rate: n_flagged as f64 / n.max(1) as f64,
        loops: n_loops,
        loop_rate: n_loops as f64 / n.max(1) as f64,
        prompts: prompts.len(),
    };
    store::write_json(&out_dir.join("attack_summary.json"), &summary)?;
    println!(
        "attack: {n} questions, {} over-reflecting, {} loops, {} prompts -> {}",
        n_flagged,
        n_loops,
        prompts.len(),
        out_dir.join("prompts.jsonl").display()
    );
    Ok(())
}
