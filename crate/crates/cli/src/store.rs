//! On-disk artifact formats: JSONL stores with strict line schemas, and
//! small numeric CSVs.
//!
//! Every line of every store deserializes into exactly one of the types
//! here; a corrupt line surfaces as an error with its line number. All
//! writers produce bytes that depend only on the data, so identical
//! pipelines yield identical files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use rentropy_attack::{GuidedRun, ReplayReport};
use rentropy_core::counterfactual::Variant;
use rentropy_core::trace::OverReflectionReport;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// One input question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionRecord {
    pub id: String,
    pub stem: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
}

/// One rendered counterfactual prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QcRecord {
    pub id: String,
    pub variant: Variant,
    /// The prompt handed to the model.
    pub rendered: String,
    /// Source question fields, kept for fact-hit analysis downstream.
    pub stem: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    /// The asserted answer, when the variant names one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

/// One line of a run store: a per-token step event, a terminal outcome
/// event, or a full snapshot for re-trimming.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RunEvent {
    Step {
        run_id: String,
        position: usize,
        selected_token: u32,
        prob: f64,
        h_c: f64,
        h_r: f64,
    },
    Outcome {
        run_id: String,
        /// One of loop_detected / eot_failure / budget_exhausted / error.
        value: String,
    },
    /// Everything needed to re-trim or replay without re-decoding.
    RunSnapshot {
        run_id: String,
        question_id: String,
        /// The rendered prompt the run started from.
        prompt_text: String,
        /// Reasoning tokens of the plain, benign generation; the replay
        /// amplification denominator.
        baseline_tokens: usize,
        report: OverReflectionReport,
        run: GuidedRun,
    },
}

/// One per-token probe measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeRecord {
    pub question_id: String,
    pub position: usize,
    pub token: u32,
    pub prob: f64,
    pub h_c: f64,
    pub h_r: f64,
}

/// Per-question status line for batch commands that keep going on
/// failures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatusRecord {
    pub id: String,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// One replay result, labeled by condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    /// "attack" or "baseline".
    pub condition: String,
    #[serde(flatten)]
    pub report: ReplayReport,
}

/// Writes one JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file =
        File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a whole JSONL store, failing with the offending line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .with_context(|| format!("{}:{}: invalid record", path.display(), i + 1))?;
        items.push(item);
    }
    Ok(items)
}

/// Writes a serialized JSON document (pretty, trailing newline).
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Writes a small CSV. Fields are numeric or bare identifiers, so no
/// quoting is needed; the writer refuses anything that would require it.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let file =
        File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        for field in row {
            anyhow::ensure!(
                !field.contains([',', '"', '\n']),
                "CSV field {field:?} would need quoting"
            );
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
