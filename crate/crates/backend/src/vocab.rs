//! A tiny greedy tokenizer over an explicit vocabulary, enough to drive
//! scripted models on real text.

use rentropy_core::dist::{TokenId, TokenSequence};

use crate::BackendError;

/// Maps token ids to surface strings and back.
///
/// Tokenization is greedy longest-match from the left; ties on length go
/// to the lowest id. Input not covered by any entry is consumed one
/// character at a time as the unknown token, or rejected when no unknown
/// token is configured.
#[derive(Debug, Clone)]
pub struct MockVocab {
    texts: Vec<String>,
    unk: Option<TokenId>,
}

impl MockVocab {
    pub fn new(texts: Vec<String>, unk: Option<TokenId>) -> Result<Self, BackendError> {
        if texts.is_empty() {
            return Err(BackendError::InvalidModel("empty vocabulary".into()));
        }
        if let Some(u) = unk {
            if u.index() >= texts.len() {
                return Err(BackendError::InvalidModel(format!(
                    "unk token {u} outside vocabulary of {}",
                    texts.len()
                )));
            }
        }
        Ok(MockVocab { texts, unk })
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn unk(&self) -> Option<TokenId> {
        self.unk
    }

    pub fn text(&self, token: TokenId) -> Option<&str> {
        self.texts.get(token.index()).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Result<TokenSequence, BackendError> {
        let mut out = Vec::new();
        let mut pos = 0usize;
        while pos < text.len() {
            let rest = &text[pos..];
            let mut best: Option<(usize, usize)> = None; // (len, id)
            for (id, t) in self.texts.iter().enumerate() {
                // Empty entries (an unk placeholder, say) never match.
                if !t.is_empty() && rest.starts_with(t.as_str()) {
                    let better = match best {
                        Some((len, _)) => t.len() > len,
                        None => true,
                    };
                    if better {
                        best = Some((t.len(), id));
                    }
                }
            }
            match best {
                Some((len, id)) => {
                    out.push(TokenId(id as u32));
                    pos += len;
                }
                None => match self.unk {
                    Some(u) => {
                        out.push(u);
                        let c = rest.chars().next().expect("pos < len");
                        pos += c.len_utf8();
                    }
                    None => {
                        return Err(BackendError::UnknownText {
                            at: pos,
                            snippet: rest.chars().take(12).collect(),
                        })
                    }
                },
            }
        }
        Ok(TokenSequence::new(out))
    }

    pub fn detokenize(&self, tokens: &[TokenId]) -> Result<String, BackendError> {
        let mut out = String::new();
        for &t in tokens {
            let s = self.text(t).ok_or(BackendError::UnknownToken(t))?;
            out.push_str(s);
        }
        Ok(out)
    }
}
