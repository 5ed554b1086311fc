//! JSON bodies of the model-server HTTP protocol.
//!
//! | endpoint            | request                              | response                    |
//! |---------------------|--------------------------------------|-----------------------------|
//! | `GET /v1/info`      |                                      | [`BackendInfo`]             |
//! | `POST /v1/tokenize` | `{"text"}`                           | `{"tokens": [int]}`         |
//! | `POST /v1/detokenize` | `{"tokens"}`                       | `{"text"}`                  |
//! | `POST /v1/score`    | `{"tokens"}`                         | `{"logprobs": [float; v]}`  |
//! | `POST /v1/generate` | `{"tokens", "max_new_tokens", "mode"}` | `{"tokens": [int]}`       |
//!
//! Failures come back as HTTP 400 with `{"error": "context_overflow" |
//! "bad_request", "detail"}`, or as a 5xx for server faults. Log-probabilities
//! are natural-log; `null` is read as negative infinity.

use serde::{Deserialize, Serialize};

use crate::backend::{BackendInfo, DecodeMode, GenerationConfig};
use crate::entropy::Distribution;
use crate::error::{Error, Result};
use crate::tokens::TokenId;

pub const INFO_PATH: &str = "/v1/info";
pub const TOKENIZE_PATH: &str = "/v1/tokenize";
pub const DETOKENIZE_PATH: &str = "/v1/detokenize";
pub const SCORE_PATH: &str = "/v1/score";
pub const GENERATE_PATH: &str = "/v1/generate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextBody {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokensBody {
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub logprobs: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMode {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub tokens: Vec<TokenId>,
    pub max_new_tokens: usize,
    pub mode: WireMode,
}

impl GenerateRequest {
    pub fn new(tokens: &[TokenId], cfg: &GenerationConfig) -> Self {
        let (kind, k, p) = match cfg.mode {
            DecodeMode::Greedy => ("greedy", None, None),
            DecodeMode::TopK { k } => ("top_k", Some(k), None),
            DecodeMode::TopP { p } => ("top_p", None, Some(p)),
        };
        Self {
            tokens: tokens.to_vec(),
            max_new_tokens: cfg.max_new_tokens,
            mode: WireMode {
                kind: kind.into(),
                k,
                p,
                seed: cfg.seed,
            },
        }
    }

    /// Recovers the generation config; used by stub servers.
    pub fn config(&self) -> Result<GenerationConfig> {
        let mode = match (self.mode.kind.as_str(), self.mode.k, self.mode.p) {
            ("greedy", _, _) => DecodeMode::Greedy,
            ("top_k", Some(k), _) => DecodeMode::TopK { k },
            ("top_p", _, Some(p)) => DecodeMode::TopP { p },
            (other, _, _) => {
                return Err(Error::ProtocolViolation(format!(
                    "unsupported decode mode {other:?}"
                )))
            }
        };
        let cfg = GenerationConfig {
            max_new_tokens: self.max_new_tokens,
            mode,
            seed: self.mode.seed,
        };
        cfg.validate()
            .map_err(|e| Error::ProtocolViolation(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default)]
    pub detail: String,
}

pub const CONTEXT_OVERFLOW: &str = "context_overflow";
pub const BAD_REQUEST: &str = "bad_request";

fn parse<'a, T: Deserialize<'a>>(body: &'a [u8], what: &str) -> Result<T> {
    serde_json::from_slice(body)
        .map_err(|e| Error::ProtocolViolation(format!("malformed {what} response: {e}")))
}

pub fn decode_info(body: &[u8]) -> Result<BackendInfo> {
    let info: BackendInfo = parse(body, "info")?;
    info.validate()?;
    Ok(info)
}

pub fn decode_tokens(body: &[u8]) -> Result<Vec<TokenId>> {
    Ok(parse::<TokensBody>(body, "tokens")?.tokens)
}

pub fn decode_text(body: &[u8]) -> Result<String> {
    Ok(parse::<TextBody>(body, "text")?.text)
}

/// Decodes and validates a score response: exactly `vocab_size` entries,
/// normalized within tolerance.
pub fn decode_score(body: &[u8], vocab_size: usize) -> Result<Distribution> {
    let resp: ScoreResponse = parse(body, "score")?;
    if resp.logprobs.len() != vocab_size {
        return Err(Error::ProtocolViolation(format!(
            "expected {vocab_size} logprobs, got {}",
            resp.logprobs.len()
        )));
    }
    let logprobs = resp
        .logprobs
        .into_iter()
        .map(|lp| lp.unwrap_or(f64::NEG_INFINITY))
        .collect();
    Distribution::from_logprobs(logprobs).map_err(|e| Error::ProtocolViolation(e.to_string()))
}

/// Maps an HTTP 400 body to an error. `len` and `window` describe the request
/// that was rejected.
pub fn decode_error(body: &[u8], len: usize, window: usize) -> Error {
    match serde_json::from_slice::<ErrorBody>(body) {
        Ok(e) if e.error == CONTEXT_OVERFLOW => Error::ContextOverflow { len, window },
        Ok(e) => Error::ProtocolViolation(format!(
            "server rejected request ({}): {}",
            e.error, e.detail
        )),
        Err(_) => Error::ProtocolViolation(format!(
            "server rejected request: {}",
            String::from_utf8_lossy(&body[..body.len().min(200)])
        )),
    }
}
