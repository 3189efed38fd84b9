//! Scripted mock models.
//!
//! A mock model is a JSON file that pins down the full conditional
//! structure of a tiny language model, so decoding behavior is exactly
//! reproducible. Two scripts exist:
//!
//! * `mock-table` — a map from a context key to a logit vector. The key
//!   is the comma-joined token ids of the (optionally windowed) context,
//!   or the context length when `key_by` is `"length"`. A `table_default`
//!   row catches unlisted contexts.
//! * `mock-markov` — a row-stochastic matrix over the vocabulary; the row
//!   of the last context token gives the next-token probabilities, with an
//!   `initial` row for the empty context.
//!
//! Optional fields: `token_text` (one surface string per token, enabling
//! text prompts and generation), `unk_token`, `context_window`, and
//! `service_ms_per_token` (simulated decode latency per token, for
//! capacity experiments).

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Deserialize;

use rentropy_core::dist::{softmax, DistEntry, NextTokenDistribution, TokenId, TokenSequence};

use crate::vocab::MockVocab;
use crate::{
    BackendDescriptor, BackendError, BackendKind, FinishReason, GenerationResult, ModelBackend,
};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MockModelFile {
    kind: String,
    vocab_size: usize,
    eot_token: u32,
    seed: u64,
    #[serde(default)]
    token_text: Option<Vec<String>>,
    #[serde(default)]
    unk_token: Option<u32>,
    #[serde(default)]
    table: Option<BTreeMap<String, Vec<f64>>>,
    #[serde(default)]
    table_default: Option<Vec<f64>>,
    #[serde(default)]
    context_window: Option<usize>,
    #[serde(default)]
    key_by: Option<String>,
    #[serde(default)]
    markov: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    initial: Option<Vec<f64>>,
    #[serde(default)]
    service_ms_per_token: Option<f64>,
}

#[derive(Debug)]
enum Script {
    Table {
        rows: BTreeMap<String, Vec<f64>>,
        default: Option<Vec<f64>>,
        window: Option<usize>,
        by_length: bool,
    },
    Markov {
        rows: Vec<Vec<f64>>,
        initial: Vec<f64>,
    },
}

/// A deterministic scripted backend.
pub struct MockBackend {
    descriptor: BackendDescriptor,
    script: Script,
    vocab: Option<MockVocab>,
    seed: u64,
    service_per_token: Option<Duration>,
}

const ROW_SUM_TOLERANCE: f64 = 1e-9;

fn validate_prob_row(row: &[f64], vocab_size: usize, what: &str) -> Result<(), BackendError> {
    if row.len() != vocab_size {
        return Err(BackendError::InvalidModel(format!(
            "{what}: expected {vocab_size} entries, found {}",
            row.len()
        )));
    }
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(BackendError::InvalidModel(format!(
            "{what}: probabilities must be finite and non-negative"
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(BackendError::InvalidModel(format!(
            "{what}: row sums to {sum}, not 1"
        )));
    }
    Ok(())
}

fn validate_logit_row(row: &[f64], vocab_size: usize, what: &str) -> Result<(), BackendError> {
    if row.is_empty() || row.len() > vocab_size {
        return Err(BackendError::InvalidModel(format!(
            "{what}: logit row length {} outside 1..={vocab_size}",
            row.len()
        )));
    }
    if row.iter().any(|x| !x.is_finite()) {
        return Err(BackendError::InvalidModel(format!(
            "{what}: logits must be finite"
        )));
    }
    Ok(())
}

impl MockBackend {
    pub fn from_path(path: &Path, top_n: usize, temperature: f64) -> Result<Self, BackendError> {
        let data = std::fs::read_to_string(path).map_err(|e| {
            BackendError::InvalidModel(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_json(&data, top_n, temperature)
    }

    pub fn from_json(json: &str, top_n: usize, temperature: f64) -> Result<Self, BackendError> {
        let file: MockModelFile = serde_json::from_str(json)
            .map_err(|e| BackendError::InvalidModel(format!("model JSON: {e}")))?;

        let kind = match file.kind.as_str() {
            "mock-table" => BackendKind::MockTable,
            "mock-markov" => BackendKind::MockMarkov,
            other => {
                return Err(BackendError::InvalidModel(format!(
                    "unknown model kind {other:?}"
                )))
            }
        };

        let script = match kind {
            BackendKind::MockTable => {
                let rows = file.table.ok_or_else(|| {
                    BackendError::InvalidModel("mock-table requires a table".into())
                })?;
                if file.markov.is_some() || file.initial.is_some() {
                    return Err(BackendError::InvalidModel(
                        "mock-table must not carry markov fields".into(),
                    ));
                }
                let by_length = match file.key_by.as_deref() {
                    None | Some("context") => false,
                    Some("length") => true,
                    Some(other) => {
                        return Err(BackendError::InvalidModel(format!(
                            "unknown key_by {other:?}"
                        )))
                    }
                };
                for (key, row) in &rows {
                    validate_logit_row(row, file.vocab_size, &format!("table row {key:?}"))?;
                    if by_length {
                        key.parse::<usize>().map_err(|_| {
                            BackendError::InvalidModel(format!(
                                "length-keyed table has non-numeric key {key:?}"
                            ))
                        })?;
                    } else if !key.is_empty() {
                        for part in key.split(',') {
                            let id: usize = part.parse().map_err(|_| {
                                BackendError::InvalidModel(format!(
                                    "table key {key:?} holds non-numeric id {part:?}"
                                ))
                            })?;
                            if id >= file.vocab_size {
                                return Err(BackendError::InvalidModel(format!(
                                    "table key {key:?} references token {id} outside vocabulary"
                                )));
                            }
                        }
                    }
                }
                if let Some(d) = &file.table_default {
                    validate_logit_row(d, file.vocab_size, "table_default")?;
                }
                if let Some(w) = file.context_window {
                    if w == 0 {
                        return Err(BackendError::InvalidModel(
                            "context_window must be at least 1".into(),
                        ));
                    }
                }
                Script::Table {
                    rows,
                    default: file.table_default,
                    window: file.context_window,
                    by_length,
                }
            }
            BackendKind::MockMarkov => {
                let rows = file.markov.ok_or_else(|| {
                    BackendError::InvalidModel("mock-markov requires a markov matrix".into())
                })?;
                if file.table.is_some() || file.table_default.is_some() || file.key_by.is_some() {
                    return Err(BackendError::InvalidModel(
                        "mock-markov must not carry table fields".into(),
                    ));
                }
                if rows.len() != file.vocab_size {
                    return Err(BackendError::InvalidModel(format!(
                        "markov matrix has {} rows for a vocabulary of {}",
                        rows.len(),
                        file.vocab_size
                    )));
                }
                for (i, row) in rows.iter().enumerate() {
                    validate_prob_row(row, file.vocab_size, &format!("markov row {i}"))?;
                }
                let initial = match file.initial {
                    Some(row) => {
                        validate_prob_row(&row, file.vocab_size, "initial row")?;
                        row
                    }
                    None => vec![1.0 / file.vocab_size as f64; file.vocab_size],
                };
                Script::Markov { rows, initial }
            }
            BackendKind::Wire => unreachable!(),
        };

        let vocab = match file.token_text {
            Some(texts) => {
                if texts.len() != file.vocab_size {
                    return Err(BackendError::InvalidModel(format!(
                        "token_text has {} entries for a vocabulary of {}",
                        texts.len(),
                        file.vocab_size
                    )));
                }
                Some(MockVocab::new(texts, file.unk_token.map(TokenId))?)
            }
            None => {
                if file.unk_token.is_some() {
                    return Err(BackendError::InvalidModel(
                        "unk_token without token_text".into(),
                    ));
                }
                None
            }
        };

        if let Some(ms) = file.service_ms_per_token {
            if !(ms.is_finite() && ms >= 0.0) {
                return Err(BackendError::InvalidModel(format!(
                    "service_ms_per_token {ms} must be finite and non-negative"
                )));
            }
        }

        let descriptor = BackendDescriptor {
            kind,
            vocab_size: file.vocab_size,
            eot_token: TokenId(file.eot_token),
            endpoint: None,
            top_n,
            temperature,
        };
        descriptor.validate()?;

        Ok(MockBackend {
            descriptor,
            script,
            vocab,
            seed: file.seed,
            service_per_token: file
                .service_ms_per_token
                .map(|ms| Duration::from_secs_f64(ms / 1000.0)),
        })
    }

    pub fn vocab(&self) -> Option<&MockVocab> {
        self.vocab.as_ref()
    }

    fn check_ctx(&self, ctx: &TokenSequence) -> Result<(), BackendError> {
        if let Some(bad) = ctx
            .iter()
            .find(|t| t.index() >= self.descriptor.vocab_size)
        {
            return Err(BackendError::InvalidRequest(format!(
                "context token {bad} outside vocabulary of {}",
                self.descriptor.vocab_size
            )));
        }
        Ok(())
    }

    /// Core distribution routine; `next_distribution` fixes the
    /// temperature to the descriptor's, generation passes its own.
    fn distribution_at(
        &self,
        ctx: &TokenSequence,
        temperature: f64,
    ) -> Result<NextTokenDistribution, BackendError> {
        if !(temperature.is_finite() && temperature >= 0.0) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {temperature} must be finite and non-negative"
            )));
        }
        self.check_ctx(ctx)?;
        let position = ctx.len();

        let full = match &self.script {
            Script::Table {
                rows,
                default,
                window,
                by_length,
            } => {
                let key = if *by_length {
                    ctx.len().to_string()
                } else {
                    let ids: Vec<TokenId> = ctx.iter().collect();
                    let visible = match window {
                        Some(w) => &ids[ids.len().saturating_sub(*w)..],
                        None => &ids[..],
                    };
                    visible
                        .iter()
                        .map(|t| t.0.to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                };
                let row = rows
                    .get(&key)
                    .or(default.as_ref())
                    .ok_or(BackendError::MissingRow(key))?;
                if temperature == 0.0 {
                    one_hot(argmax_index(row), position)?
                } else {
                    let scaled: Vec<f64> = row.iter().map(|x| x / temperature).collect();
                    softmax(&scaled, position)?
                }
            }
            Script::Markov { rows, initial } => {
                let row = match ctx.last() {
                    Some(t) => &rows[t.index()],
                    None => initial,
                };
                if temperature == 0.0 {
                    one_hot(argmax_index(row), position)?
                } else {
                    let entries = scale_probs(row, temperature);
                    NextTokenDistribution::new(entries, false, position)?
                }
            }
        };

        // Cut to the advertised top_n, flagging the distribution truncated.
        if full.len() > self.descriptor.top_n {
            let kept: Vec<DistEntry> = full.entries()[..self.descriptor.top_n].to_vec();
            Ok(NextTokenDistribution::new(kept, true, position)?)
        } else {
            Ok(full)
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
fn argmax_index(row: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn one_hot(index: usize, position: usize) -> Result<NextTokenDistribution, rentropy_core::CoreError> {
    NextTokenDistribution::new(
        vec![DistEntry {
            token: TokenId(index as u32),
            logprob: 0.0,
        }],
        false,
        position,
    )
}

/// Applies temperature to a probability row: p^(1/T), renormalized.
/// Zero-probability tokens stay outside the support.
fn scale_probs(row: &[f64], temperature: f64) -> Vec<DistEntry> {
    if temperature == 1.0 {
        return row
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(i, p)| DistEntry {
                token: TokenId(i as u32),
                logprob: p.ln(),
            })
            .collect();
    }
    let inv = 1.0 / temperature;
    let support: Vec<(usize, f64)> = row
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(i, p)| (i, p.ln() * inv))
        .collect();
    // log-sum-exp over the scaled log-probabilities.
    let max = support
        .iter()
        .map(|&(_, l)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let log_norm = support
        .iter()
        .map(|&(_, l)| (l - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    support
        .into_iter()
        .map(|(i, l)| DistEntry {
            token: TokenId(i as u32),
            logprob: (l - log_norm).min(0.0),
        })
        .collect()
}

/// FNV-1a over concatenated byte chunks; stable across platforms, used to
/// derive per-prompt sampling streams.
fn fnv1a64(chunks: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for chunk in chunks {
        for &b in *chunk {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

impl ModelBackend for MockBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn next_distribution(
        &self,
        ctx: &TokenSequence,
    ) -> Result<NextTokenDistribution, BackendError> {
        self.distribution_at(ctx, self.descriptor.temperature)
    }

    fn generate(
        &self,
        prompt: &str,
        max_tokens: usize,
        temperature: f64,
    ) -> Result<GenerationResult, BackendError> {
        let vocab = self
            .vocab
            .as_ref()
            .ok_or(BackendError::Unsupported("generation requires token_text"))?;
        if prompt.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        if max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be > 0".into()));
        }
        let start = Instant::now();

        let mut ctx = vocab.tokenize(prompt)?;
        // Same prompt and parameters, same stream: the sampler is seeded
        // from the model seed and a stable hash of the request.
        let mut rng = ChaCha20Rng::seed_from_u64(
            self.seed
                ^ fnv1a64(&[
                    prompt.as_bytes(),
                    &(max_tokens as u64).to_le_bytes(),
                    &temperature.to_bits().to_le_bytes(),
                ]),
        );

        let mut generated: Vec<TokenId> = Vec::new();
        let mut steps = 0usize;
        let mut finish = FinishReason::Length;
        for _ in 0..max_tokens {
            let dist = self.distribution_at(&ctx, temperature)?;
            steps += 1;
            let token = if temperature == 0.0 {
                dist.argmax().token
            } else {
                sample(&dist, &mut rng)
            };
            if token == self.descriptor.eot_token {
                finish = FinishReason::Eot;
                break;
            }
            generated.push(token);
            ctx.push(token);
        }

        let text = vocab.detokenize(&generated.iter().copied().collect::<Vec<_>>())?;

        if let Some(per) = self.service_per_token {
            // Deadline-based: total service time is per-token cost times
            // decode steps, independent of how fast the script ran.
            let deadline = start + per * steps as u32;
            loop {
                let now = Instant::now();
                if now >= deadline {
                    break;
                }
                std::thread::sleep(deadline - now);
            }
        }

        Ok(GenerationResult {
            text: text.clone(),
            reasoning_text: Some(text),
            n_reasoning_tokens: generated.len(),
            finish_reason: finish,
        })
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence, BackendError> {
        self.vocab
            .as_ref()
            .ok_or(BackendError::Unsupported("tokenize requires token_text"))?
            .tokenize(text)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String, BackendError> {
        self.vocab
            .as_ref()
            .ok_or(BackendError::Unsupported("detokenize requires token_text"))?
            .detokenize(tokens)
    }
}

/// Draws from the visible entries, renormalizing truncated mass.
fn sample(dist: &NextTokenDistribution, rng: &mut ChaCha20Rng) -> TokenId {
    let total: f64 = dist.entries().iter().map(DistEntry::prob).sum();
    let mut u: f64 = rng.random::<f64>() * total;
    for e in dist.entries() {
        u -= e.prob();
        if u <= 0.0 {
            return e.token;
        }
    }
    dist.entries().last().expect("non-empty").token
}
