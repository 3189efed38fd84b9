//! `rentropy analyze`: recompute trend analyses from a stored record
//! file — per-token probe records or a guided-run event store.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use rentropy_core::dist::{RecursiveEntropyRecord, TokenId};
use rentropy_core::trend::{analyze_trend, GROUP_SIZE};

use crate::config::LoadedConfig;
use crate::store::{self, ProbeRecord, RunEvent, StatusRecord};

use super::ensure_out_dir;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RecordsKind {
    /// Per-token probe records (`probe_records.jsonl`).
    Probe,
    /// Guided-run event store (`runs.jsonl`), using its step events.
    Runs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Record store to analyze.
    #[arg(long)]
    pub records: PathBuf,
    /// What the record store contains.
    #[arg(long, value_enum, default_value = "probe")]
    pub kind: RecordsKind,
    /// Output name prefix inside out_dir.
    #[arg(long, default_value = "analyze")]
    pub prefix: String,
}

/// Groups scored tokens by item id, preserving file order within a group.
fn collect(args: &AnalyzeArgs) -> Result<BTreeMap<String, Vec<RecursiveEntropyRecord>>> {
    let mut grouped: BTreeMap<String, Vec<RecursiveEntropyRecord>> = BTreeMap::new();
    match args.kind {
        RecordsKind::Probe => {
            let records: Vec<ProbeRecord> = store::read_jsonl(&args.records)?;
            for r in records {
                grouped
                    .entry(r.question_id.clone())
                    .or_default()
                    .push(RecursiveEntropyRecord {
                        token: TokenId(r.token),
                        prob: r.prob,
                        successor_entropy: r.h_c,
                        value: r.h_r,
                        position: r.position,
                    });
            }
        }
        RecordsKind::Runs => {
            let events: Vec<RunEvent> = store::read_jsonl(&args.records)?;
            for e in events {
                if let RunEvent::Step {
                    run_id,
                    position,
                    selected_token,
                    prob,
                    h_c,
                    h_r,
                } = e
                {
                    grouped
                        .entry(run_id)
                        .or_default()
                        .push(RecursiveEntropyRecord {
                            token: TokenId(selected_token),
                            prob,
                            successor_entropy: h_c,
                            value: h_r,
                            position,
                        });
                }
            }
        }
    }
    Ok(grouped)
}

pub fn run(args: &AnalyzeArgs, cfg: &LoadedConfig) -> Result<()> {
    let out_dir = ensure_out_dir(cfg)?;
    let grouped = collect(args)?;

    let mut analyses = BTreeMap::new();
    let mut statuses = Vec::new();
    for (id, records) in &grouped {
        if records.len() < 2 * GROUP_SIZE {
            statuses.push(StatusRecord {
                id: id.clone(),
                status: "insufficient_data".into(),
                detail: Some(format!(
                    "{} records, need at least {}",
                    records.len(),
                    2 * GROUP_SIZE
                )),
            });
            continue;
        }
        match analyze_trend(records) {
            Ok(analysis) => {
                let class = serde_json::to_value(analysis.classification)?
                    .as_str()
                    .expect("classification serializes to a string")
                    .to_string();
                statuses.push(StatusRecord {
                    id: id.clone(),
                    status: class,
                    detail: None,
                });
                analyses.insert(id.clone(), analysis);
            }
            Err(e) => statuses.push(StatusRecord {
                id: id.clone(),
                status: "error".into(),
                detail: Some(e.to_string()),
            }),
        }
    }

    store::write_jsonl(
        &out_dir.join(format!("{}_status.jsonl", args.prefix)),
        &statuses,
    )?;
    super::write_trend_artifacts(&out_dir, &args.prefix, &analyses)?;

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &statuses {
        *counts.entry(s.status.as_str()).or_default() += 1;
    }
    let breakdown: Vec<String> = counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!(
        "analyze: {} trajectories ({})",
        grouped.len(),
        breakdown.join(" ")
    );
    Ok(())
}
