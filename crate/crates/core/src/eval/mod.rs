//! Evaluation harnesses: needle grid, timing, the entropy/loss diagnostic,
//! and QA scoring.

pub mod correlation;
pub mod needle;
pub mod qa;
pub mod timing;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::ModelBackend;
use crate::error::{Error, Result};
use crate::scoring::SegmentScore;
use crate::selection::{build_key_context, PipelineConfig};
use crate::tokens::{TokenId, TokenSequence};

/// How a long input is reduced to something the model can read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Entropy-ranked segment selection.
    Xl3m,
    /// Keep the first `sink_len` and last `recent_len` tokens.
    StreamTruncate,
    /// Keep only the last `sink_len + recent_len` tokens.
    TailTruncate,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Xl3m, Method::StreamTruncate, Method::TailTruncate];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Xl3m => "xl3m",
            Method::StreamTruncate => "stream_truncate",
            Method::TailTruncate => "tail_truncate",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown method {s:?}")))
    }
}

/// Settings shared by all methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarnessConfig {
    pub pipeline: PipelineConfig,
    pub sink_len: usize,
    pub recent_len: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            sink_len: 128,
            recent_len: 1792,
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self, method: Method) -> Result<()> {
        match method {
            Method::Xl3m => self.pipeline.validate(),
            Method::StreamTruncate | Method::TailTruncate => {
                self.pipeline.generation.validate()?;
                check_truncation(
                    self.sink_len,
                    self.recent_len,
                    self.pipeline.segmentation.context_window,
                )
            }
        }
    }
}

/// The sequence a method hands to the model.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedContext {
    pub tokens: TokenSequence,
    pub scores: Option<Vec<SegmentScore>>,
    pub selected: Option<Vec<usize>>,
}

/// Reduces `seq` with `method`. Only [`Method::Xl3m`] calls the backend.
pub fn method_context(
    backend: &dyn ModelBackend,
    method: Method,
    seq: &TokenSequence,
    cfg: &HarnessConfig,
) -> Result<PreparedContext> {
    let window = cfg.pipeline.segmentation.context_window;
    match method {
        Method::Xl3m => {
            let (_, scores, key) = build_key_context(backend, seq, &cfg.pipeline)?;
            Ok(PreparedContext {
                tokens: key.tokens,
                scores: Some(scores),
                selected: Some(key.selected_indices),
            })
        }
        Method::StreamTruncate => Ok(PreparedContext {
            tokens: stream_truncate(seq, cfg.sink_len, cfg.recent_len, window)?,
            scores: None,
            selected: None,
        }),
        Method::TailTruncate => Ok(PreparedContext {
            tokens: stream_truncate(seq, 0, cfg.sink_len + cfg.recent_len, window)?,
            scores: None,
            selected: None,
        }),
    }
}

fn check_truncation(sink_len: usize, recent_len: usize, context_window: usize) -> Result<()> {
    if sink_len + recent_len == 0 {
        return Err(Error::ConfigInvalid(
            "sink_len + recent_len must be positive".into(),
        ));
    }
    if sink_len + recent_len > context_window {
        return Err(Error::ConfigInvalid(format!(
            "sink_len + recent_len must not exceed context_window ({sink_len} + {recent_len} > {context_window})"
        )));
    }
    Ok(())
}

/// Keeps the first `sink_len` and the last `recent_len` tokens. Sequences
/// that already fit are returned unchanged.
pub fn stream_truncate(
    seq: &TokenSequence,
    sink_len: usize,
    recent_len: usize,
    context_window: usize,
) -> Result<TokenSequence> {
    check_truncation(sink_len, recent_len, context_window)?;
    if seq.len() <= sink_len + recent_len {
        return Ok(seq.clone());
    }
    let mut out: Vec<TokenId> = Vec::with_capacity(sink_len + recent_len);
    out.extend_from_slice(&seq[..sink_len]);
    out.extend_from_slice(&seq[seq.len() - recent_len..]);
    Ok(out.into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_truncate_lengths() {
        let seq: TokenSequence = (0..10_000u32).collect();
        let out = stream_truncate(&seq, 128, 1792, 2048).unwrap();
        assert_eq!(out.len(), 1920);
        assert_eq!(&out[..128], &seq[..128]);
        assert_eq!(&out[128..], &seq[10_000 - 1792..]);

        let short: TokenSequence = (0..1000u32).collect();
        assert_eq!(stream_truncate(&short, 128, 1792, 2048).unwrap(), short);

        let tail = stream_truncate(&seq, 0, 1792, 2048).unwrap();
        assert_eq!(&tail[..], &seq[10_000 - 1792..]);
    }

    #[test]
    fn stream_truncate_rejects_oversized_window() {
        let seq: TokenSequence = (0..10u32).collect();
        assert!(matches!(
            stream_truncate(&seq, 1024, 1792, 2048),
            Err(Error::ConfigInvalid(_))
        ));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("pcw".parse::<Method>().is_err());
    }
}
