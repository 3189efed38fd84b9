//! Counterfactual prompt construction.
//!
//! A question with a known answer is rewritten into a prompt that asks the
//! model to justify something false (directed form), to argue against the
//! true answer (reversed form), or to explain why no answer exists
//! (undirected form). Incorrect answers are taken from the question's own
//! option list when it has one, otherwise synthesized by multiplicative
//! perturbation of the numeric answer.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;

/// Canonical form of an answer string, used for all equality checks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Canonical {
    /// A numeral, normalized: thousands separators and a leading `+`
    /// removed, trailing fractional zeros stripped, `-0` folded to `0`.
    Number(String),
    /// Anything non-numeric, trimmed and lowercased.
    Text(String),
}

impl Canonical {
    pub fn as_str(&self) -> &str {
        match self {
            Canonical::Number(s) | Canonical::Text(s) => s,
        }
    }

    pub fn is_number(&self) -> bool {
        matches!(self, Canonical::Number(_))
    }
}

/// Normalizes an answer so that `10`, ` 10.0` and `1,0` comparisons behave:
/// numerals are reduced to a canonical digit string, everything else is
/// compared case-insensitively.
pub fn canonicalize(raw: &str) -> Canonical {
    let trimmed = raw.trim();
    if let Some(n) = canonical_number(trimmed) {
        Canonical::Number(n)
    } else {
        Canonical::Text(trimmed.to_lowercase())
    }
}

fn canonical_number(s: &str) -> Option<String> {
    let unsigned = s.strip_prefix('-').or_else(|| s.strip_prefix('+'));
    let negative = s.starts_with('-');
    let body: String = unsigned.unwrap_or(s).replace(',', "");
    if body.is_empty() {
        return None;
    }
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body.as_str(), None),
    };
    if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if let Some(f) = frac_part {
        if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
    }
    let int_norm = {
        let t = int_part.trim_start_matches('0');
        if t.is_empty() {
            "0"
        } else {
            t
        }
    };
    let frac_norm = frac_part.map(|f| f.trim_end_matches('0')).unwrap_or("");
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    out.push_str(int_norm);
    if !frac_norm.is_empty() {
        out.push('.');
        out.push_str(frac_norm);
    }
    if out == "-0" {
        out = "0".to_string();
    }
    Some(out)
}

/// A question with its reference answer and, optionally, a closed set of
/// answer options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasicQuestion {
    pub stem: String,
    pub answer: String,
    #[serde(default)]
    pub options: Option<Vec<String>>,
}

impl BasicQuestion {
    /// Checks structural soundness: a non-empty stem and answer, and if an
    /// option list is present, exactly one option canonically equal to the
    /// answer.
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.stem.trim().is_empty() {
            return Err(CoreError::InvalidQuestion("empty stem".into()));
        }
        if self.answer.trim().is_empty() {
            return Err(CoreError::InvalidQuestion("empty answer".into()));
        }
        if let Some(options) = &self.options {
            let target = canonicalize(&self.answer);
            let matches = options
                .iter()
                .filter(|o| canonicalize(o) == target)
                .count();
            if matches != 1 {
                return Err(CoreError::InvalidQuestion(format!(
                    "expected exactly one option equal to the answer, found {matches}"
                )));
            }
        }
        Ok(())
    }
}

/// The three counterfactual prompt shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Assert a specific wrong answer and ask why it is right.
    Directed,
    /// Ask why the true answer is wrong.
    Reversed,
    /// Ask why no correct answer exists.
    Undirected,
}

impl std::str::FromStr for Variant {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "directed" => Ok(Variant::Directed),
            "reversed" => Ok(Variant::Reversed),
            "undirected" => Ok(Variant::Undirected),
            other => Err(CoreError::InvalidQuestion(format!(
                "unknown variant {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Directed => "directed",
            Variant::Reversed => "reversed",
            Variant::Undirected => "undirected",
        })
    }
}

/// Prompt templates with `{stem}` and `{answer}` placeholders.
///
/// The defaults append the challenge directly after the stem, separated by
/// a single space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateSet {
    pub directed: String,
    pub reversed: String,
    pub undirected: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet {
            directed: "{stem} Why the answer is {answer}?".to_string(),
            reversed: "{stem} Why is the answer not {answer}?".to_string(),
            undirected: "{stem} Why does this question have no correct answer?".to_string(),
        }
    }
}

impl TemplateSet {
    /// Directed and reversed templates must reference both placeholders;
    /// the undirected template must reference the stem and never the
    /// answer, so its rendering cannot leak an answer literal.
    pub fn validate(&self) -> Result<(), CoreError> {
        for (name, t) in [("directed", &self.directed), ("reversed", &self.reversed)] {
            if !t.contains("{stem}") || !t.contains("{answer}") {
                return Err(CoreError::InvalidTemplate(format!(
                    "{name} template needs {{stem}} and {{answer}}"
                )));
            }
        }
        if !self.undirected.contains("{stem}") {
            return Err(CoreError::InvalidTemplate(
                "undirected template needs {stem}".into(),
            ));
        }
        if self.undirected.contains("{answer}") {
            return Err(CoreError::InvalidTemplate(
                "undirected template must not reference {answer}".into(),
            ));
        }
        Ok(())
    }

    fn render(&self, variant: Variant, stem: &str, answer: &str) -> String {
        let t = match variant {
            Variant::Directed => &self.directed,
            Variant::Reversed => &self.reversed,
            Variant::Undirected => &self.undirected,
        };
        t.replace("{stem}", stem).replace("{answer}", answer)
    }
}

/// Where a set of incorrect answers came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IncorrectSource {
    Options,
    Perturbed,
}

/// Distinct wrong answers for a question, in canonical form. None of the
/// values equals the canonical reference answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncorrectAnswerSet {
    pub values: Vec<String>,
    pub source: IncorrectSource,
}

const PERTURB_ATTEMPTS: usize = 10_000;

/// Builds a set of wrong answers for `question`.
///
/// With an option list, the result is simply every option that is not the
/// answer (`n` is ignored; the list is already closed). Without options the
/// answer must be numeric, and `n` distinct values are produced by scaling
/// it with a factor drawn from `[0.5, 0.9] ∪ [1.1, 1.5]` and rounding back
/// to the answer's decimal precision.
pub fn synthesize_incorrect(
    question: &BasicQuestion,
    n: usize,
    seed: u64,
) -> Result<IncorrectAnswerSet, CoreError> {
    question.validate()?;
    let answer = canonicalize(&question.answer);

    if let Some(options) = &question.options {
        let mut values = Vec::new();
        for o in options {
            let c = canonicalize(o);
            if c == answer {
                continue;
            }
            let s = c.as_str().to_string();
            if !values.contains(&s) {
                values.push(s);
            }
        }
        if values.is_empty() {
            return Err(CoreError::CannotPerturb(
                "option list contains no incorrect answers".into(),
            ));
        }
        return Ok(IncorrectAnswerSet {
            values,
            source: IncorrectSource::Options,
        });
    }

    let Canonical::Number(num) = &answer else {
        return Err(CoreError::CannotPerturb(
            "answer is not numeric and the question has no options".into(),
        ));
    };
    if n == 0 {
        return Err(CoreError::CannotPerturb(
            "requested zero incorrect answers".into(),
        ));
    }
    let value: f64 = num
        .parse()
        .map_err(|_| CoreError::CannotPerturb(format!("unparseable numeral {num:?}")))?;
    let decimals = num.split_once('.').map(|(_, f)| f.len()).unwrap_or(0);

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut values: Vec<String> = Vec::with_capacity(n);
    for _ in 0..PERTURB_ATTEMPTS {
        if values.len() == n {
            break;
        }
        let magnitude: f64 = rng.random_range(0.10..=0.50);
        let factor = if rng.random::<bool>() {
            1.0 + magnitude
        } else {
            1.0 - magnitude
        };
        let scaled = value * factor;
        let rounded = format!("{scaled:.decimals$}");
        let candidate = match canonicalize(&rounded) {
            Canonical::Number(c) => c,
            Canonical::Text(_) => continue,
        };
        if candidate == *num || values.contains(&candidate) {
            continue;
        }
        values.push(candidate);
    }
    if values.len() < n {
        return Err(CoreError::CannotPerturb(format!(
            "only found {} of {} distinct perturbations",
            values.len(),
            n
        )));
    }
    Ok(IncorrectAnswerSet {
        values,
        source: IncorrectSource::Perturbed,
    })
}

/// A rendered counterfactual prompt, ready for a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualQuestion {
    pub variant: Variant,
    /// The full prompt text handed to the model.
    pub rendered: String,
    /// The source question.
    pub base: BasicQuestion,
    /// The asserted answer: a wrong one for directed prompts, the true one
    /// for reversed prompts, absent for undirected prompts.
    pub target: Option<String>,
}

/// Renders one counterfactual prompt.
///
/// Directed prompts require a non-empty incorrect set; the target is drawn
/// from it with a seeded generator so the same seed always picks the same
/// wrong answer.
pub fn construct(
    question: &BasicQuestion,
    variant: Variant,
    incorrect: Option<&IncorrectAnswerSet>,
    seed: u64,
    templates: &TemplateSet,
) -> Result<CounterfactualQuestion, CoreError> {
    question.validate()?;
    templates.validate()?;
    let (rendered, target) = match variant {
        Variant::Directed => {
            let set = incorrect
                .filter(|s| !s.values.is_empty())
                .ok_or_else(|| {
                    CoreError::InvalidQuestion(
                        "directed variant needs a non-empty incorrect answer set".into(),
                    )
                })?;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let pick = set.values[rng.random_range(0..set.values.len())].clone();
            (
                templates.render(variant, &question.stem, &pick),
                Some(pick),
            )
        }
        Variant::Reversed => (
            templates.render(variant, &question.stem, &question.answer),
            Some(question.answer.clone()),
        ),
        Variant::Undirected => (templates.render(variant, &question.stem, ""), None),
    };
    Ok(CounterfactualQuestion {
        variant,
        rendered,
        base: question.clone(),
        target,
    })
}
