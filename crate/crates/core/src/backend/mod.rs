//! The model-backend contract and its implementations.
//!
//! Everything model-specific sits behind [`ModelBackend`]: tokenization,
//! the next-token distribution after a sequence, and generation. Two
//! deterministic in-process backends ([`OracleBackend`], [`NgramBackend`])
//! make the pipeline testable without a neural model; [`RemoteBackend`]
//! speaks the HTTP wire protocol in [`wire`].

mod instrumented;
mod ngram;
mod oracle;
mod remote;
pub mod wire;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::Distribution;
use crate::error::{Error, Result};
use crate::tokens::{TokenId, TokenSequence};

pub use instrumented::{CallStats, Instrumented};
pub use ngram::NgramBackend;
pub use oracle::{OracleBackend, ORACLE_EPSILON};
pub use remote::{RemoteBackend, RetryPolicy};

/// Vocabulary size of the built-in byte-level tokenizer.
pub const BYTE_VOCAB: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub name: String,
    pub vocab_size: usize,
    pub context_window: usize,
    pub max_parallel_hint: usize,
}

impl BackendInfo {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::ProtocolViolation(format!(
                "vocab_size must be at least 2, got {}",
                self.vocab_size
            )));
        }
        if self.context_window == 0 {
            return Err(Error::ProtocolViolation(
                "context_window must be positive".into(),
            ));
        }
        if self.max_parallel_hint == 0 {
            return Err(Error::ProtocolViolation(
                "max_parallel_hint must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    TopK { k: usize },
    TopP { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub max_new_tokens: usize,
    pub mode: DecodeMode,
    /// Seed for the sampled modes.
    pub seed: Option<u64>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: 32,
            mode: DecodeMode::Greedy,
            seed: None,
        }
    }
}

impl GenerationConfig {
    pub fn greedy(max_new_tokens: usize) -> Self {
        Self {
            max_new_tokens,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens == 0 {
            return Err(Error::ConfigInvalid(
                "max_new_tokens must be positive".into(),
            ));
        }
        match self.mode {
            DecodeMode::TopK { k: 0 } => Err(Error::ConfigInvalid("top_k requires k >= 1".into())),
            DecodeMode::TopP { p } if !(p > 0.0 && p <= 1.0) => Err(Error::ConfigInvalid(format!(
                "top_p requires 0 < p <= 1, got {p}"
            ))),
            _ => Ok(()),
        }
    }
}

/// A language model as seen by the pipeline.
///
/// Implementations must tolerate concurrent calls up to
/// `info().max_parallel_hint`.
pub trait ModelBackend: Send + Sync {
    fn info(&self) -> &BackendInfo;

    fn tokenize(&self, text: &str) -> Result<TokenSequence>;

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String>;

    /// Distribution of the token following the last position of `tokens`.
    /// Fails with [`Error::ContextOverflow`] past the context window.
    fn score(&self, tokens: &[TokenId]) -> Result<Distribution>;

    /// Generates up to `cfg.max_new_tokens` tokens, reporting each through
    /// `on_token` as soon as it is available.
    fn generate_streaming(
        &self,
        tokens: &[TokenId],
        cfg: &GenerationConfig,
        on_token: &mut dyn FnMut(TokenId),
    ) -> Result<()>;

    fn generate(&self, tokens: &[TokenId], cfg: &GenerationConfig) -> Result<TokenSequence> {
        let mut out = Vec::with_capacity(cfg.max_new_tokens);
        self.generate_streaming(tokens, cfg, &mut |t| out.push(t))?;
        Ok(out.into())
    }
}

impl<B: ModelBackend + ?Sized> ModelBackend for &B {
    fn info(&self) -> &BackendInfo {
        (**self).info()
    }
    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        (**self).detokenize(tokens)
    }
    fn score(&self, tokens: &[TokenId]) -> Result<Distribution> {
        (**self).score(tokens)
    }
    fn generate_streaming(
        &self,
        tokens: &[TokenId],
        cfg: &GenerationConfig,
        on_token: &mut dyn FnMut(TokenId),
    ) -> Result<()> {
        (**self).generate_streaming(tokens, cfg, on_token)
    }
}

impl<B: ModelBackend + ?Sized> ModelBackend for Box<B> {
    fn info(&self) -> &BackendInfo {
        (**self).info()
    }
    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        (**self).tokenize(text)
    }
    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        (**self).detokenize(tokens)
    }
    fn score(&self, tokens: &[TokenId]) -> Result<Distribution> {
        (**self).score(tokens)
    }
    fn generate_streaming(
        &self,
        tokens: &[TokenId],
        cfg: &GenerationConfig,
        on_token: &mut dyn FnMut(TokenId),
    ) -> Result<()> {
        (**self).generate_streaming(tokens, cfg, on_token)
    }
}

/// Byte-level tokenization: one token per UTF-8 byte.
pub fn byte_tokenize(text: &str) -> TokenSequence {
    text.bytes().map(TokenId::from).collect()
}

pub fn byte_detokenize(tokens: &[TokenId]) -> Result<String> {
    let bytes = tokens
        .iter()
        .map(|&t| {
            u8::try_from(t).map_err(|_| Error::TokenOutOfVocab {
                token: t,
                vocab_size: BYTE_VOCAB,
            })
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

pub(crate) fn check_window(tokens: &[TokenId], info: &BackendInfo) -> Result<()> {
    if tokens.len() > info.context_window {
        return Err(Error::ContextOverflow {
            len: tokens.len(),
            window: info.context_window,
        });
    }
    Ok(())
}

/// Picks the next token from `dist` according to `mode`.
pub fn pick_token<R: Rng + ?Sized>(dist: &Distribution, mode: &DecodeMode, rng: &mut R) -> TokenId {
    let lp = dist.logprobs();
    let chosen = match *mode {
        DecodeMode::Greedy => dist.argmax(),
        DecodeMode::TopK { k } => {
            let mut order: Vec<usize> = (0..lp.len()).collect();
            order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
            order.truncate(k.max(1));
            sample_from(&order, lp, rng)
        }
        DecodeMode::TopP { p } => {
            let mut order: Vec<usize> = (0..lp.len()).collect();
            order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
            let mut mass = 0.0;
            let mut keep = 0;
            for &i in &order {
                mass += lp[i].exp();
                keep += 1;
                if mass >= p {
                    break;
                }
            }
            order.truncate(keep.max(1));
            sample_from(&order, lp, rng)
        }
    };
    chosen as TokenId
}

fn sample_from<R: Rng + ?Sized>(candidates: &[usize], logprobs: &[f64], rng: &mut R) -> usize {
    let total: f64 = candidates.iter().map(|&i| logprobs[i].exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for &i in candidates {
        u -= logprobs[i].exp();
        if u < 0.0 {
            return i;
        }
    }
    *candidates.last().expect("non-empty candidates")
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn byte_round_trip() {
        let text = "needle: 42\n";
        assert_eq!(byte_detokenize(&byte_tokenize(text)).unwrap(), text);
        assert!(byte_detokenize(&[300]).is_err());
    }

    #[test]
    fn generation_config_validation() {
        assert!(GenerationConfig::greedy(1).validate().is_ok());
        assert!(GenerationConfig::greedy(0).validate().is_err());
        let mut cfg = GenerationConfig::greedy(4);
        cfg.mode = DecodeMode::TopK { k: 0 };
        assert!(cfg.validate().is_err());
        cfg.mode = DecodeMode::TopP { p: 1.5 };
        assert!(cfg.validate().is_err());
        cfg.mode = DecodeMode::TopP { p: 1.0 };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn decode_mode_wire_shape() {
        let json = serde_json::to_string(&DecodeMode::TopK { k: 5 }).unwrap();
        assert_eq!(json, r#"{"type":"top_k","k":5}"#);
        let mode: DecodeMode = serde_json::from_str(r#"{"type":"greedy"}"#).unwrap();
        assert_eq!(mode, DecodeMode::Greedy);
    }

    #[test]
    fn top_k_one_is_greedy() {
        let d = Distribution::from_probs(&[0.1, 0.6, 0.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            assert_eq!(pick_token(&d, &DecodeMode::TopK { k: 1 }, &mut rng), 1);
        }
    }

    #[test]
    fn top_p_restricts_support() {
        let d = Distribution::from_probs(&[0.05, 0.7, 0.25]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let t = pick_token(&d, &DecodeMode::TopP { p: 0.9 }, &mut rng);
            assert!(t == 1 || t == 2);
        }
    }
}
