//! Subcommand implementations.
//!
//! Batch commands share a failure policy: an unreachable backend aborts
//! the whole command (so the process can exit with the dedicated code),
//! anything else is recorded as that item's status and the batch moves
//! on. Every command writes its artifacts under the configured `out_dir`
//! and prints a one-line summary.

pub mod analyze;
pub mod attack;
pub mod bench;
pub mod counterfactual;
pub mod probe;
pub mod replay;
pub mod trim;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rentropy_attack::AttackError;
use rentropy_backend::BackendError;
use rentropy_core::dist::{DistEntry, NextTokenDistribution};
use rentropy_core::trend::TrendAnalysis;

use crate::config::LoadedConfig;
use crate::store;

/// Creates the output directory (relative to the working directory) and
/// returns it.
pub fn ensure_out_dir(cfg: &LoadedConfig) -> Result<PathBuf> {
    let dir = cfg.config.out_dir.clone();
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating out_dir {}", dir.display()))?;
    Ok(dir)
}

/// Should this backend error abort the whole batch?
pub fn backend_unavailable(e: &BackendError) -> bool {
    matches!(e, BackendError::Unavailable(_))
}

/// Same question for pipeline errors, which may wrap a backend error.
pub fn attack_unavailable(e: &AttackError) -> bool {
    matches!(e, AttackError::Backend(BackendError::Unavailable(_)))
}

/// Draws one entry from the visible slate, renormalizing over it.
pub fn sample_entry(dist: &NextTokenDistribution, rng: &mut ChaCha20Rng) -> DistEntry {
    let entries = dist.entries();
    let total: f64 = entries.iter().map(DistEntry::prob).sum();
    let mut u: f64 = rng.random::<f64>() * total;
    for e in entries {
        u -= e.prob();
        if u <= 0.0 {
            return *e;
        }
    }
    *entries.last().expect("distributions are never empty")
}

/// Writes the shared trend artifacts: `{prefix}_trends.json` (analyses
/// keyed by item id) and `{prefix}_groups.csv` (one row per group).
pub fn write_trend_artifacts(
    dir: &Path,
    prefix: &str,
    analyses: &BTreeMap<String, TrendAnalysis>,
) -> Result<()> {
    store::write_json(&dir.join(format!("{prefix}_trends.json")), analyses)?;

    let mut rows = Vec::new();
    for (id, analysis) in analyses {
        for (i, g) in analysis.groups.iter().enumerate() {
            rows.push(vec![
                id.clone(),
                i.to_string(),
                format!("{}", g.median_token_index),
                format!("{}", g.mean_re),
                format!("{}", g.min_re),
                format!("{}", g.max_re),
                format!("{}", g.variance),
                g.count.to_string(),
            ]);
        }
    }
    store::write_csv(
        &dir.join(format!("{prefix}_groups.csv")),
        &[
            "id",
            "group",
            "median_token_index",
            "mean_re",
            "min_re",
            "max_re",
            "variance",
            "count",
        ],
        &rows,
    )
}
