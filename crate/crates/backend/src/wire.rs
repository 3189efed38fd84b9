//! Blocking HTTP client for model servers.
//!
//! Protocol: JSON over HTTP.
//!
//! * `POST {endpoint}/v1/distribution` with
//!   `{"tokens": [..], "top_n": n, "temperature": t}` returns
//!   `{"entries": [{"token_id": id, "logprob": l}, ..], "truncated": b}`.
//! * `POST {endpoint}/v1/generate` with
//!   `{"prompt": s, "max_tokens": n, "temperature": t}` returns
//!   `{"text": s, "reasoning_text": s|null, "n_reasoning_tokens": n,
//!     "finish_reason": "eot"|"length"|"error"}`.
//!
//! Transport failures map to [`BackendError::Unavailable`], a context
//! rejection (HTTP 413 or an explicit `context_overflow` error code) to
//! [`BackendError::ContextOverflow`], and anything unparseable to
//! [`BackendError::WireFormat`]. The wire protocol exposes no tokenizer,
//! so `tokenize`/`detokenize` report unsupported.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use rentropy_core::dist::{DistEntry, NextTokenDistribution, TokenId, TokenSequence};

use crate::{
    BackendDescriptor, BackendError, BackendKind, GenerationResult, ModelBackend,
};

const REQUEST_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Serialize)]
struct DistributionRequest<'a> {
    tokens: &'a [u32],
    top_n: usize,
    temperature: f64,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
    temperature: f64,
}

#[derive(Deserialize)]
struct WireDistEntry {
    token_id: u32,
    logprob: f64,
}

#[derive(Deserialize)]
struct DistributionResponse {
    entries: Vec<WireDistEntry>,
    truncated: bool,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
    #[serde(default)]
    reasoning_text: Option<String>,
    n_reasoning_tokens: usize,
    finish_reason: String,
}

#[derive(Deserialize)]
struct ErrorBody {
    #[serde(default)]
    error: Option<String>,
}

/// Parses and validates a distribution response body.
pub fn parse_distribution_response(
    bytes: &[u8],
    position: usize,
) -> Result<NextTokenDistribution, BackendError> {
    let resp: DistributionResponse = serde_json::from_slice(bytes)
        .map_err(|e| BackendError::WireFormat(format!("distribution body: {e}")))?;
    let entries: Vec<DistEntry> = resp
        .entries
        .into_iter()
        .map(|e| DistEntry {
            token: TokenId(e.token_id),
            logprob: e.logprob,
        })
        .collect();
    NextTokenDistribution::new(entries, resp.truncated, position)
        .map_err(|e| BackendError::WireFormat(format!("distribution invalid: {e}")))
}

/// Parses and validates a generation response body.
pub fn parse_generate_response(bytes: &[u8]) -> Result<GenerationResult, BackendError> {
    let resp: GenerateResponse = serde_json::from_slice(bytes)
        .map_err(|e| BackendError::WireFormat(format!("generate body: {e}")))?;
    Ok(GenerationResult {
        finish_reason: resp.finish_reason.parse()?,
        text: resp.text,
        reasoning_text: resp.reasoning_text,
        n_reasoning_tokens: resp.n_reasoning_tokens,
    })
}

/// HTTP-backed [`ModelBackend`].
pub struct WireBackend {
    descriptor: BackendDescriptor,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl WireBackend {
    /// `endpoint` is the server base URL, e.g. `http://host:8000`.
    /// `vocab_size` and `eot_token` describe the remote model; the wire
    /// protocol has no discovery call, so the caller must know them.
    pub fn new(
        endpoint: &str,
        api_key: Option<String>,
        vocab_size: usize,
        eot_token: TokenId,
        top_n: usize,
        temperature: f64,
    ) -> Result<Self, BackendError> {
        let descriptor = BackendDescriptor {
            kind: BackendKind::Wire,
            vocab_size,
            eot_token,
            endpoint: Some(endpoint.trim_end_matches('/').to_string()),
            top_n,
            temperature,
        };
        descriptor.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(REQUEST_TIMEOUT)
            .build()
            .map_err(|e| BackendError::Unavailable(format!("client init: {e}")))?;
        Ok(WireBackend {
            descriptor,
            client,
            api_key,
        })
    }

    fn post<B: Serialize>(&self, path: &str, body: &B) -> Result<Vec<u8>, BackendError> {
        let base = self.descriptor.endpoint.as_deref().expect("wire endpoint");
        let url = format!("{base}{path}");
        let mut req = self.client.post(&url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| BackendError::Unavailable(format!("{url}: {e}")))?;
        let status = resp.status();
        let bytes = resp
            .bytes()
            .map_err(|e| BackendError::Unavailable(format!("{url}: reading body: {e}")))?
            .to_vec();
        if status.is_success() {
            return Ok(bytes);
        }
        let body_text = String::from_utf8_lossy(&bytes).into_owned();
        let code = serde_json::from_slice::<ErrorBody>(&bytes)
            .ok()
            .and_then(|b| b.error);
        if status.as_u16() == 413 || code.as_deref() == Some("context_overflow") {
            return Err(BackendError::ContextOverflow(format!(
                "{url}: {status}: {body_text}"
            )));
        }
        if status.is_server_error() {
            return Err(BackendError::Unavailable(format!(
                "{url}: {status}: {body_text}"
            )));
        }
        Err(BackendError::WireFormat(format!(
            "{url}: {status}: {body_text}"
        )))
    }
}

impl ModelBackend for WireBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn next_distribution(
        &self,
        ctx: &TokenSequence,
    ) -> Result<NextTokenDistribution, BackendError> {
        if ctx.is_empty() {
            return Err(BackendError::InvalidRequest(
                "distribution query needs at least one context token".into(),
            ));
        }
        let tokens: Vec<u32> = ctx.iter().map(|t| t.0).collect();
        let body = DistributionRequest {
            tokens: &tokens,
            top_n: self.descriptor.top_n,
            temperature: self.descriptor.temperature,
        };
        let bytes = self.post("/v1/distribution", &body)?;
        parse_distribution_response(&bytes, ctx.len())
    }

    fn generate(
        &self,
        prompt: &str,
        max_tokens: usize,
        temperature: f64,
    ) -> Result<GenerationResult, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        if max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be > 0".into()));
        }
        let body = GenerateRequest {
            prompt,
            max_tokens,
            temperature,
        };
        let bytes = self.post("/v1/generate", &body)?;
        parse_generate_response(&bytes)
    }

    fn tokenize(&self, _text: &str) -> Result<TokenSequence, BackendError> {
        Err(BackendError::Unsupported(
            "the wire protocol exposes no tokenizer",
        ))
    }

    fn detokenize(&self, _tokens: &[TokenId]) -> Result<String, BackendError> {
        Err(BackendError::Unsupported(
            "the wire protocol exposes no tokenizer",
        ))
    }
}
