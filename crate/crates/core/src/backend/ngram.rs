use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backend::{
    byte_detokenize, byte_tokenize, check_window, pick_token, BackendInfo, GenerationConfig,
    ModelBackend,
};
use crate::entropy::Distribution;
use crate::error::{Error, Result};
use crate::tokens::{check_vocab, TokenId, TokenSequence};

#[derive(Debug, Clone, Default)]
struct Counts {
    next: HashMap<TokenId, u64>,
    total: u64,
}

/// Add-alpha smoothed n-gram model (order 1 to 3) over a token corpus.
#[derive(Debug, Clone)]
pub struct NgramBackend {
    info: BackendInfo,
    order: usize,
    alpha: f64,
    /// `tables[n]` maps contexts of length `n` to next-token counts.
    tables: Vec<HashMap<Vec<TokenId>, Counts>>,
}

impl NgramBackend {
    pub const DEFAULT_CONTEXT_WINDOW: usize = 2048;

    pub fn new(corpus: &[TokenId], order: usize, alpha: f64, vocab_size: usize) -> Result<Self> {
        if !(1..=3).contains(&order) {
            return Err(Error::ConfigInvalid(format!(
                "n-gram order must be 1, 2 or 3, got {order}"
            )));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "smoothing alpha must be positive, got {alpha}"
            )));
        }
        if vocab_size < 2 {
            return Err(Error::ConfigInvalid("vocab_size must be at least 2".into()));
        }
        if corpus.len() <= order {
            return Err(Error::InvalidInput(format!(
                "corpus of {} tokens is too short for order {order}",
                corpus.len()
            )));
        }
        check_vocab(corpus, vocab_size)?;

        let mut tables = vec![HashMap::<Vec<TokenId>, Counts>::new(); order];
        for (ctx_len, table) in tables.iter_mut().enumerate() {
            for end in ctx_len..corpus.len() {
                let counts = table
                    .entry(corpus[end - ctx_len..end].to_vec())
                    .or_default();
                *counts.next.entry(corpus[end]).or_default() += 1;
                counts.total += 1;
            }
        }

        Ok(Self {
            info: BackendInfo {
                name: format!("ngram-{order}"),
                vocab_size,
                context_window: Self::DEFAULT_CONTEXT_WINDOW,
                max_parallel_hint: 64,
            },
            order,
            alpha,
            tables,
        })
    }

    /// Byte-level model trained on `text`.
    pub fn from_text(text: &str, order: usize, alpha: f64) -> Result<Self> {
        Self::new(&byte_tokenize(text), order, alpha, super::BYTE_VOCAB)
    }

    pub fn with_context_window(mut self, context_window: usize) -> Self {
        self.info.context_window = context_window.max(1);
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn distribution_after(&self, tokens: &[TokenId]) -> Result<Distribution> {
        let ctx_len = (self.order - 1).min(tokens.len());
        let ctx = &tokens[tokens.len() - ctx_len..];
        let v = self.info.vocab_size;
        let logprobs = match self.tables[ctx_len].get(ctx) {
            None => vec![-(v as f64).ln(); v],
            Some(counts) => {
                let norm = (counts.total as f64 + self.alpha * v as f64).ln();
                let floor = self.alpha.ln() - norm;
                let mut lp = vec![floor; v];
                for (&t, &c) in &counts.next {
                    lp[t as usize] = (c as f64 + self.alpha).ln() - norm;
                }
                lp
            }
        };
        Distribution::from_logprobs(logprobs)
    }
}

impl ModelBackend for NgramBackend {
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
        self.distribution_after(tokens)
    }

    fn generate_streaming(
        &self,
        tokens: &[TokenId],
        cfg: &GenerationConfig,
        on_token: &mut dyn FnMut(TokenId),
    ) -> Result<()> {
        check_window(tokens, &self.info)?;
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.unwrap_or(0));
        // Only the trailing order-1 tokens matter.
        let keep = self.order - 1;
        let mut ctx: Vec<TokenId> = tokens[tokens.len().saturating_sub(keep)..].to_vec();
        for _ in 0..cfg.max_new_tokens {
            let dist = self.distribution_after(&ctx)?;
            let next = pick_token(&dist, &cfg.mode, &mut rng);
            on_token(next);
            ctx.push(next);
            if ctx.len() > keep {
                ctx.remove(0);
            }
        }
        Ok(())
    }
}
