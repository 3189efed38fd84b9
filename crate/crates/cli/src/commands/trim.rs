//! `rentropy trim`: re-cut stored looping runs into attack prompts,
//! without re-decoding anything.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use rentropy_attack::{compression_ratio, trim, AttackPrompt, RunOutcome, ScanOrder, TokenCounter};
use rentropy_backend::BackendKind;

use crate::config::LoadedConfig;
use crate::store::{self, RunEvent, StatusRecord};

use super::attack::parse_scan;
use super::ensure_out_dir;

#[derive(Debug, Args)]
pub struct TrimArgs {
    /// Run store to re-trim (defaults to out_dir/runs.jsonl).
    #[arg(long)]
    pub runs: Option<PathBuf>,
    /// Splice-point scan direction.
    #[arg(long, default_value = "ascending", value_parser = parse_scan)]
    pub scan: ScanOrder,
    /// Output prompt file name inside out_dir.
    #[arg(long, default_value = "prompts.jsonl")]
    pub out: String,
}

pub fn run(args: &TrimArgs, cfg: &LoadedConfig) -> Result<()> {
    let out_dir = ensure_out_dir(cfg)?;
    let backend = cfg.build_backend()?;
    // Wire backends cannot count tokens, so fall back to a crude but
    // universal measure.
    let counter = if cfg.config.backend.kind == BackendKind::Wire {
        TokenCounter::WhitespaceWords
    } else {
        TokenCounter::Backend(backend.as_ref())
    };
    let runs_path = args
        .runs
        .clone()
        .unwrap_or_else(|| out_dir.join("runs.jsonl"));
    let events: Vec<RunEvent> = store::read_jsonl(&runs_path)?;

    let mut prompts: Vec<AttackPrompt> = Vec::new();
    let mut statuses: Vec<StatusRecord> = Vec::new();
    let mut ratios: Vec<f64> = Vec::new();
    let mut snapshots = 0usize;
    for event in &events {
        let RunEvent::RunSnapshot {
            run_id,
            report,
            run,
            ..
        } = event
        else {
            continue;
        };
        snapshots += 1;
        if run.outcome != RunOutcome::LoopDetected {
            statuses.push(StatusRecord {
                id: run_id.clone(),
                status: "skipped".into(),
                detail: Some(format!("run ended with {}", run.outcome)),
            });
            continue;
        }
        let Some(loop_info) = &run.loop_info else {
            statuses.push(StatusRecord {
                id: run_id.clone(),
                status: "error".into(),
                detail: Some("loop outcome without loop evidence".into()),
            });
            continue;
        };
        match trim(run, report, loop_info, run_id, args.scan, &counter) {
            Ok(prompt) => {
                let ratio = compression_ratio(&prompt, run, &counter)?;
                ratios.push(ratio);
                statuses.push(StatusRecord {
                    id: run_id.clone(),
                    status: "ok".into(),
                    detail: Some(format!("compression {ratio:.3}")),
                });
                prompts.push(prompt);
            }
            Err(e) => statuses.push(StatusRecord {
                id: run_id.clone(),
                status: "error".into(),
                detail: Some(e.to_string()),
            }),
        }
    }

    let out_path = out_dir.join(&args.out);
    store::write_jsonl(&out_path, &prompts)?;
    store::write_jsonl(&out_dir.join("trim_status.jsonl"), &statuses)?;
    let mean_ratio = if ratios.is_empty() {
        f64::NAN
    } else {
        ratios.iter().sum::<f64>() / ratios.len() as f64
    };
    println!(
        "trim: {} prompts from {snapshots} runs (mean compression {mean_ratio:.3}) -> {}",
        prompts.len(),
        out_path.display()
    );
    Ok(())
}
