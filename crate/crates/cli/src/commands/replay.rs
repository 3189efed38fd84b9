//! `rentropy replay`: feed trimmed prompts back to a backend and score
//! what comes out. Each prompt's source run supplies the benign baseline
//! (the original rendered prompt and its reasoning-token count), so the
//! command reports both conditions side by side.
//!
//! In the printed table an asterisk marks figures that include at least
//! one replay whose output looped.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use rentropy_attack::{replay, replay_text, AttackPrompt};

use crate::config::LoadedConfig;
use crate::store::{self, ReplayRecord, RunEvent, StatusRecord};

use super::ensure_out_dir;

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Prompt store (defaults to out_dir/prompts.jsonl).
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Run store the prompts came from (defaults to out_dir/runs.jsonl).
    #[arg(long)]
    pub runs: Option<PathBuf>,
    /// Skip the benign baseline condition.
    #[arg(long)]
    pub no_baseline: bool,
    /// Token cap per replay (defaults to `[generation] max_tokens`).
    #[arg(long)]
    pub max_tokens: Option<usize>,
}

/// Per-condition aggregates for the table and the summary file.
#[derive(Debug, serde::Serialize)]
struct ConditionSummary {
    n: usize,
    avg_tokens: f64,
    max_tokens: usize,
    loop_rate: f64,
    avg_amplification: f64,
    /// True when the max-token replay itself looped.
    max_looped: bool,
    /// True when any replay in the condition looped.
    any_looped: bool,
}

fn summarize(records: &[&ReplayRecord]) -> ConditionSummary {
    let n = records.len();
    let tokens: Vec<usize> = records.iter().map(|r| r.report.reasoning_tokens).collect();
    let loops = records.iter().filter(|r| r.report.loop_info.found).count();
    let max_idx = tokens
        .iter()
        .enumerate()
        .max_by_key(|(_, t)| **t)
        .map(|(i, _)| i);
    ConditionSummary {
        n,
        avg_tokens: tokens.iter().sum::<usize>() as f64 / n.max(1) as f64,
        max_tokens: tokens.iter().copied().max().unwrap_or(0),
        loop_rate: loops as f64 / n.max(1) as f64,
        avg_amplification: records.iter().map(|r| r.report.amplification).sum::<f64>()
            / n.max(1) as f64,
        max_looped: max_idx.is_some_and(|i| records[i].report.loop_info.found),
        any_looped: loops > 0,
    }
}

fn mark(value: String, looped: bool) -> String {
    if looped {
        format!("{value}*")
    } else {
        value
    }
}

pub fn run(args: &ReplayArgs, cfg: &LoadedConfig) -> Result<()> {
    let out_dir = ensure_out_dir(cfg)?;
    let backend = cfg.build_backend()?;
    let prompts_path = args
        .prompts
        .clone()
        .unwrap_or_else(|| out_dir.join("prompts.jsonl"));
    let runs_path = args
        .runs
        .clone()
        .unwrap_or_else(|| out_dir.join("runs.jsonl"));
    let prompts: Vec<AttackPrompt> = store::read_jsonl(&prompts_path)?;
    let events: Vec<RunEvent> = store::read_jsonl(&runs_path)?;

    // source run id -> (original prompt text, baseline token count)
    let mut sources: BTreeMap<&str, (&str, usize)> = BTreeMap::new();
    for event in &events {
        if let RunEvent::RunSnapshot {
            run_id,
            prompt_text,
            baseline_tokens,
            ..
        } = event
        {
            sources.insert(run_id, (prompt_text, *baseline_tokens));
        }
    }

    let max_tokens = args.max_tokens.unwrap_or(cfg.config.generation.max_tokens);
    let temperature = cfg.config.generation.replay_temperature;
    let max_period = cfg.config.sampler.max_period;
    let min_repeats = cfg.config.sampler.min_repeats;

    let mut records: Vec<ReplayRecord> = Vec::new();
    let mut statuses: Vec<StatusRecord> = Vec::new();
    for prompt in &prompts {
        let Some((original, baseline_tokens)) = sources.get(prompt.source_run_id.as_str()) else {
            statuses.push(StatusRecord {
                id: prompt.id.clone(),
                status: "error".into(),
                detail: Some(format!("no snapshot for run {}", prompt.source_run_id)),
            });
            continue;
        };
        let report = replay(
            backend.as_ref(),
            prompt,
            max_tokens,
            temperature,
            *baseline_tokens,
            max_period,
            min_repeats,
        );
        statuses.push(StatusRecord {
            id: prompt.id.clone(),
            status: match &report.error {
                Some(e) => format!("error: {e}"),
                None if report.loop_info.found => "looped".into(),
                None => "completed".into(),
            },
            detail: Some(format!("{} tokens", report.reasoning_tokens)),
        });
        records.push(ReplayRecord {
            condition: "attack".into(),
            report,
        });
        if !args.no_baseline {
            let report = replay_text(
                backend.as_ref(),
                &format!("bl-{}", prompt.source_run_id),
                original,
                max_tokens,
                temperature,
                *baseline_tokens,
                max_period,
                min_repeats,
            );
            records.push(ReplayRecord {
                condition: "baseline".into(),
                report,
            });
        }
    }

    store::write_jsonl(&out_dir.join("replays.jsonl"), &records)?;
    store::write_jsonl(&out_dir.join("replay_status.jsonl"), &statuses)?;

    let mut summaries: BTreeMap<String, ConditionSummary> = BTreeMap::new();
    for condition in ["attack", "baseline"] {
        let subset: Vec<&ReplayRecord> =
            records.iter().filter(|r| r.condition == condition).collect();
        if !subset.is_empty() {
            summaries.insert(condition.to_string(), summarize(&subset));
        }
    }
    store::write_json(&out_dir.join("replay_summary.json"), &summaries)?;

    println!("{:<10} {:>4} {:>14} {:>12}", "condition", "n", "avg_tokens", "max_tokens");
    for (condition, s) in &summaries {
        println!(
            "{condition:<10} {:>4} {:>14} {:>12}",
            s.n,
            mark(format!("{:.1}", s.avg_tokens), s.any_looped),
            mark(s.max_tokens.to_string(), s.max_looped),
        );
    }
    println!("(* includes at least one replay whose output looped)");
    Ok(())
}
