//! `rentropy probe`: decode naturally from each question and record the
//! recursive-entropy trajectory token by token.
//!
//! The decode samples from the backend's visible slate with a seeded
//! generator (the backend's temperature already shaped the
//! distribution), and each emitted token is scored against its
//! successor nucleus — one lookahead query per token. Trajectories long
//! enough to fill two position groups get a trend classification.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rentropy_backend::{BackendKind, ModelBackend};
use rentropy_core::dist::{recursive_entropy, top_p_renormalize, RecursiveEntropyRecord};
use rentropy_core::trend::{analyze_trend, GROUP_SIZE};

use crate::config::{item_seed, LoadedConfig};
use crate::store::{self, ProbeRecord, QuestionRecord, StatusRecord};

use super::{backend_unavailable, ensure_out_dir, sample_entry};

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// Question file (JSONL); defaults to `[fixtures] questions`.
    #[arg(long)]
    pub questions: Option<PathBuf>,
    /// Token cap per decode (defaults to `[generation] probe_max_tokens`).
    #[arg(long)]
    pub max_tokens: Option<usize>,
}

/// Decodes one trajectory and scores every emitted token.
fn probe_one(
    backend: &dyn ModelBackend,
    prompt: &str,
    max_tokens: usize,
    top_p: f64,
    floor: f64,
    seed: u64,
) -> Result<Vec<RecursiveEntropyRecord>, rentropy_backend::BackendError> {
    let eot = backend.descriptor().eot_token;
    let mut ctx = backend.tokenize(prompt)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for position in 0..max_tokens {
        let dist = backend.next_distribution(&ctx)?;
        let pick = sample_entry(&dist, &mut rng);
        if pick.token == eot {
            break;
        }
        let successor = backend.next_distribution(&ctx.with_token(pick.token))?;
        let nucleus = top_p_renormalize(&successor, top_p)?;
        records.push(recursive_entropy(
            pick.token,
            pick.prob(),
            &nucleus,
            floor,
            position,
        ));
        ctx.push(pick.token);
    }
    Ok(records)
}

pub fn run(args: &ProbeArgs, cfg: &LoadedConfig) -> Result<()> {
    let out_dir = ensure_out_dir(cfg)?;
    anyhow::ensure!(
        cfg.config.backend.kind != BackendKind::Wire,
        "probing needs a token-level backend; wire backends cannot tokenize"
    );
    let backend = cfg.build_backend()?;
    let questions: Vec<QuestionRecord> =
        store::read_jsonl(&cfg.questions_path(args.questions.as_deref())?)?;
    let max_tokens = args
        .max_tokens
        .unwrap_or(cfg.config.generation.probe_max_tokens);
    let top_p = cfg.config.sampler.top_p;
    let floor = cfg.config.sampler.entropy_floor;

    let mut all_records = Vec::new();
    let mut analyses = BTreeMap::new();
    let mut statuses = Vec::new();
    for q in &questions {
        let seed = item_seed(cfg.config.seed, &q.id);
        let records = match probe_one(backend.as_ref(), &q.stem, max_tokens, top_p, floor, seed)
        {
            Ok(r) => r,
            Err(e) if backend_unavailable(&e) => return Err(e.into()),
            Err(e) => {
                statuses.push(StatusRecord {
                    id: q.id.clone(),
                    status: "error".into(),
                    detail: Some(e.to_string()),
                });
                continue;
            }
        };
        for r in &records {
            all_records.push(ProbeRecord {
                question_id: q.id.clone(),
                position: r.position,
                token: r.token.0,
                prob: r.prob,
                h_c: r.successor_entropy,
                h_r: r.value,
            });
        }
        if records.len() < 2 * GROUP_SIZE {
            statuses.push(StatusRecord {
                id: q.id.clone(),
                status: "insufficient_data".into(),
                detail: Some(format!(
                    "{} records, need at least {}",
                    records.len(),
                    2 * GROUP_SIZE
                )),
            });
            continue;
        }
        match analyze_trend(&records) {
            Ok(analysis) => {
                let class = serde_json::to_value(analysis.classification)?
                    .as_str()
                    .expect("classification serializes to a string")
                    .to_string();
                statuses.push(StatusRecord {
                    id: q.id.clone(),
                    status: class,
                    detail: None,
                });
                analyses.insert(q.id.clone(), analysis);
            }
            Err(e) => statuses.push(StatusRecord {
                id: q.id.clone(),
                status: "error".into(),
                detail: Some(e.to_string()),
            }),
        }
    }

    store::write_jsonl(&out_dir.join("probe_records.jsonl"), &all_records)?;
    store::write_jsonl(&out_dir.join("probe_status.jsonl"), &statuses)?;
    super::write_trend_artifacts(&out_dir, "probe", &analyses)?;

    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &statuses {
        *counts.entry(s.status.as_str()).or_default() += 1;
    }
    let breakdown: Vec<String> = counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!(
        "probe: {} questions, {} records ({})",
        questions.len(),
        all_records.len(),
        breakdown.join(" ")
    );
    Ok(())
}
