use crate::backend::{
    byte_detokenize, byte_tokenize, check_window, BackendInfo, GenerationConfig, ModelBackend,
};
use crate::entropy::Distribution;
use crate::error::{Error, Result};
use crate::tokens::{check_vocab, find_subsequence, TokenId, TokenSequence};

/// Probability mass the oracle leaves off the answer token.
pub const ORACLE_EPSILON: f64 = 1e-6;

/// Deterministic stand-in for a model that "knows" one fact.
///
/// Any sequence containing the needle gets a near one-hot distribution on the
/// first answer token; every other sequence gets the uniform distribution.
/// Generation emits the answer when the needle is present and a filler token
/// otherwise. The decoding mode is ignored.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    info: BackendInfo,
    needle: TokenSequence,
    answer: TokenSequence,
    filler: TokenId,
    confident: Distribution,
    uniform: Distribution,
}

impl OracleBackend {
    pub fn new(
        needle: TokenSequence,
        answer: TokenSequence,
        vocab_size: usize,
        context_window: usize,
    ) -> Result<Self> {
        if needle.is_empty() || answer.is_empty() {
            return Err(Error::ConfigInvalid(
                "oracle needle and answer must be non-empty".into(),
            ));
        }
        if vocab_size < 2 || context_window == 0 {
            return Err(Error::ConfigInvalid(
                "oracle needs vocab_size >= 2 and a positive context window".into(),
            ));
        }
        check_vocab(&needle, vocab_size).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        check_vocab(&answer, vocab_size).map_err(|e| Error::ConfigInvalid(e.to_string()))?;

        let target = answer[0] as usize;
        let rest = (ORACLE_EPSILON / (vocab_size - 1) as f64).ln();
        let mut logprobs = vec![rest; vocab_size];
        logprobs[target] = (-ORACLE_EPSILON).ln_1p();
        let confident = Distribution::from_logprobs(logprobs)?;
        // A space when the vocabulary has one, and never the answer's first token.
        let filler = [b' ' as usize, 0, 1]
            .into_iter()
            .find(|&t| t < vocab_size && t != target)
            .expect("vocab_size >= 2") as TokenId;

        Ok(Self {
            info: BackendInfo {
                name: "oracle".into(),
                vocab_size,
                context_window,
                max_parallel_hint: 64,
            },
            needle,
            answer,
            filler,
            confident,
            uniform: Distribution::uniform(vocab_size),
        })
    }

    /// Byte-level oracle built from text.
    pub fn from_text(needle: &str, answer: &str, context_window: usize) -> Result<Self> {
        Self::new(
            byte_tokenize(needle),
            byte_tokenize(answer),
            super::BYTE_VOCAB,
            context_window,
        )
    }

    pub fn needle(&self) -> &TokenSequence {
        &self.needle
    }

    pub fn answer(&self) -> &TokenSequence {
        &self.answer
    }

    pub fn filler_token(&self) -> TokenId {
        self.filler
    }

    pub fn contains_needle(&self, tokens: &[TokenId]) -> bool {
        find_subsequence(tokens, &self.needle).is_some()
    }
}

impl ModelBackend for OracleBackend {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        let seq = byte_tokenize(text);
        seq.check_vocab(self.info.vocab_size)?;
        Ok(seq)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        byte_detokenize(tokens)
    }

    fn score(&self, tokens: &[TokenId]) -> Result<Distribution> {
        check_window(tokens, &self.info)?;
        Ok(if self.contains_needle(tokens) {
            self.confident.clone()
        } else {
            self.uniform.clone()
        })
    }

    fn generate_streaming(
        &self,
        tokens: &[TokenId],
        cfg: &GenerationConfig,
        on_token: &mut dyn FnMut(TokenId),
    ) -> Result<()> {
        check_window(tokens, &self.info)?;
        cfg.validate()?;
        let found = self.contains_needle(tokens);
        for i in 0..cfg.max_new_tokens {
            let token = match self.answer.get(i) {
                Some(&t) if found => t,
                _ => self.filler,
            };
            on_token(token);
        }
        Ok(())
    }
}
