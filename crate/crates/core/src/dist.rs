//! Next-token distributions and the recursive-entropy score.
//!
//! All probabilities are carried as natural log-probabilities and all
//! entropies are in nats. A distribution is canonical once constructed:
//! entries are sorted by probability descending with token id as the
//! tie-break, so prefix scans (top-p, top-k) are well defined.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::CoreError;

/// Default clamp applied to successor entropies so the recursive-entropy
/// ratio stays finite on near-deterministic successors.
pub const DEFAULT_ENTROPY_FLOOR: f64 = 1e-6;

/// Index into a model vocabulary.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for TokenId {
    fn from(v: u32) -> Self {
        TokenId(v)
    }
}

/// An ordered run of tokens (a prompt, a generated continuation, or both).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        TokenSequence(tokens)
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.0.iter().copied()
    }

    pub fn push(&mut self, token: TokenId) {
        self.0.push(token);
    }

    /// Returns a new sequence `self ++ other`, leaving both inputs intact.
    pub fn concat(&self, other: &TokenSequence) -> TokenSequence {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        TokenSequence(v)
    }

    /// Returns a new sequence with one token appended.
    pub fn with_token(&self, token: TokenId) -> TokenSequence {
        let mut v = self.0.clone();
        v.push(token);
        TokenSequence(v)
    }

    pub fn last(&self) -> Option<TokenId> {
        self.0.last().copied()
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(v: Vec<u32>) -> Self {
        TokenSequence(v.into_iter().map(TokenId).collect())
    }
}

/// One vocabulary entry of a next-token distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistEntry {
    pub token: TokenId,
    pub logprob: f64,
}

impl DistEntry {
    pub fn prob(&self) -> f64 {
        self.logprob.exp()
    }
}

/// A next-token distribution at a given position of a trajectory.
///
/// Invariants enforced by [`NextTokenDistribution::new`]:
/// * at least one entry, every logprob finite and non-positive;
/// * token ids unique;
/// * entries sorted by logprob descending, token id ascending on ties;
/// * unless `truncated`, the probabilities sum to 1 within 1e-6.
///
/// `truncated` means the producer withheld part of the support (for
/// example a server that only returns its top-N entries), so the visible
/// mass may be less than one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextTokenDistribution {
    entries: Vec<DistEntry>,
    truncated: bool,
    position: usize,
}

/// Untruncated distributions must carry unit mass within this tolerance.
pub const MASS_TOLERANCE: f64 = 1e-6;

impl NextTokenDistribution {
    pub fn new(
        mut entries: Vec<DistEntry>,
        truncated: bool,
        position: usize,
    ) -> Result<Self, CoreError> {
        if entries.is_empty() {
            return Err(CoreError::InvalidDistribution("no entries".into()));
        }
        for e in &entries {
            if !e.logprob.is_finite() {
                return Err(CoreError::InvalidDistribution(format!(
                    "non-finite logprob for token {}",
                    e.token
                )));
            }
            if e.logprob > 0.0 {
                return Err(CoreError::InvalidDistribution(format!(
                    "logprob above zero for token {}",
                    e.token
                )));
            }
        }
        entries.sort_by(|a, b| {
            b.logprob
                .partial_cmp(&a.logprob)
                .expect("finite logprobs compare")
                .then(a.token.cmp(&b.token))
        });
        if entries.windows(2).any(|w| w[0].token == w[1].token) {
            return Err(CoreError::InvalidDistribution("duplicate token id".into()));
        }
        if !truncated {
            let mass: f64 = entries.iter().map(DistEntry::prob).sum();
            if (mass - 1.0).abs() > MASS_TOLERANCE {
                return Err(CoreError::InvalidDistribution(format!(
                    "untruncated mass {mass} not within {MASS_TOLERANCE} of 1"
                )));
            }
        }
        Ok(NextTokenDistribution {
            entries,
            truncated,
            position,
        })
    }

    /// Entries in canonical order (probability descending, id ascending).
    pub fn entries(&self) -> &[DistEntry] {
        &self.entries
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The highest-probability entry (first in canonical order).
    pub fn argmax(&self) -> DistEntry {
        self.entries[0]
    }
}

/// Converts raw logits into a full-support distribution.
///
/// Token ids are assigned by input index. Uses the usual max-shifted
/// formulation so large logits do not overflow: the result is exactly
/// invariant under adding a constant to every logit.
pub fn softmax(logits: &[f64], position: usize) -> Result<NextTokenDistribution, CoreError> {
    if logits.is_empty() {
        return Err(CoreError::InvalidLogits("empty logit vector".into()));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::InvalidLogits("non-finite logit".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_norm: f64 = logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    let entries = logits
        .iter()
        .enumerate()
        .map(|(i, x)| DistEntry {
            token: TokenId(i as u32),
            // Shifted logits are <= 0 and log_norm >= 0, so this cannot
            // round above zero.
            logprob: (x - max) - log_norm,
        })
        .collect();
    NextTokenDistribution::new(entries, false, position)
}

/// The nucleus of a distribution: the smallest canonical-order prefix whose
/// cumulative parent probability reaches the threshold, renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct TopPSet {
    /// Kept tokens with renormalized probabilities, still in canonical order.
    /// These sum to 1 within 1e-9.
    pub entries: Vec<(TokenId, f64)>,
    /// Mass the kept tokens carried in the parent distribution.
    pub parent_mass: f64,
    /// The threshold that produced this set.
    pub threshold: f64,
}

/// Selects the smallest prefix of `dist` with cumulative probability >= `p`
/// and renormalizes it to unit mass.
///
/// If the scan exhausts the entries without reaching `p`:
/// * an untruncated distribution keeps its full support (the shortfall can
///   only be rounding noise, since the mass is 1 within tolerance);
/// * a truncated distribution fails with
///   [`CoreError::InsufficientMass`], because the missing tail might have
///   supplied the difference.
pub fn top_p_renormalize(dist: &NextTokenDistribution, p: f64) -> Result<TopPSet, CoreError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(CoreError::InvalidTopP(p));
    }
    let mut cum = 0.0f64;
    let mut cut = None;
    for (i, e) in dist.entries().iter().enumerate() {
        cum += e.prob();
        if cum >= p {
            cut = Some(i + 1);
            break;
        }
    }
    let kept = match cut {
        Some(n) => n,
        None if !dist.truncated() => dist.len(),
        None => {
            return Err(CoreError::InsufficientMass {
                available: cum,
                requested: p,
            })
        }
    };
    let parent_mass: f64 = dist.entries()[..kept].iter().map(DistEntry::prob).sum();
    let entries = dist.entries()[..kept]
        .iter()
        .map(|e| (e.token, e.prob() / parent_mass))
        .collect();
    Ok(TopPSet {
        entries,
        parent_mass,
        threshold: p,
    })
}

/// Shannon entropy of a nucleus in nats, clamped from below.
///
/// The clamp keeps downstream ratios finite when the successor
/// distribution is (numerically) one-hot. `floor` must be positive;
/// zero-probability entries contribute nothing, matching the
/// `q ln q -> 0` limit.
pub fn clamped_entropy(set: &TopPSet, floor: f64) -> f64 {
    assert!(
        floor.is_finite() && floor > 0.0,
        "entropy floor must be positive and finite"
    );
    let h: f64 = set
        .entries
        .iter()
        .map(|&(_, q)| if q > 0.0 { -q * q.ln() } else { 0.0 })
        .sum();
    h.max(floor)
}

/// One scored token of a trajectory: the probability the model assigned to
/// it, divided by the clamped entropy of what could follow it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursiveEntropyRecord {
    pub token: TokenId,
    /// Probability of `token` under the distribution it was drawn from.
    pub prob: f64,
    /// Clamped entropy of the successor nucleus, in nats.
    pub successor_entropy: f64,
    /// `prob / successor_entropy`. Always finite and positive.
    pub value: f64,
    /// Index of the token within its trajectory.
    pub position: usize,
}

/// Scores one token: low successor entropy and high token probability both
/// push the value up, which is the signature of a converging repetition.
pub fn recursive_entropy(
    token: TokenId,
    token_prob: f64,
    successor: &TopPSet,
    floor: f64,
    position: usize,
) -> RecursiveEntropyRecord {
    assert!(
        token_prob > 0.0 && token_prob <= 1.0 + 1e-9,
        "token probability must lie in (0, 1], got {token_prob}"
    );
    let prob = token_prob.min(1.0);
    let successor_entropy = clamped_entropy(successor, floor);
    RecursiveEntropyRecord {
        token,
        prob,
        successor_entropy,
        value: prob / successor_entropy,
        position,
    }
}
