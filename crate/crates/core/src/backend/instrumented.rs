use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;
use std::time::Duration;

use crate::backend::{BackendInfo, GenerationConfig, ModelBackend};
use crate::entropy::Distribution;
use crate::error::Result;
use crate::tokens::{TokenId, TokenSequence};

/// Snapshot of the counters kept by [`Instrumented`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CallStats {
    pub score_calls: usize,
    pub generate_calls: usize,
    /// Highest number of concurrent `score` calls observed.
    pub max_in_flight: usize,
    /// Highest total token count across concurrent `score` calls.
    pub max_in_flight_tokens: usize,
}

/// Wraps a backend to count calls, track concurrency, and optionally inject
/// latency into scoring and per-token generation.
#[derive(Debug)]
pub struct Instrumented<B> {
    inner: B,
    score_latency: Duration,
    token_latency: Duration,
    score_calls: AtomicUsize,
    generate_calls: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    in_flight_tokens: AtomicUsize,
    max_in_flight_tokens: AtomicUsize,
}

impl<B: ModelBackend> Instrumented<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            score_latency: Duration::ZERO,
            token_latency: Duration::ZERO,
            score_calls: AtomicUsize::new(0),
            generate_calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            in_flight_tokens: AtomicUsize::new(0),
            max_in_flight_tokens: AtomicUsize::new(0),
        }
    }

    /// Sleep this long inside every `score` call.
    pub fn with_score_latency(mut self, latency: Duration) -> Self {
        self.score_latency = latency;
        self
    }

    /// Sleep this long before emitting each generated token.
    pub fn with_token_latency(mut self, latency: Duration) -> Self {
        self.token_latency = latency;
        self
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn stats(&self) -> CallStats {
        CallStats {
            score_calls: self.score_calls.load(Ordering::SeqCst),
            generate_calls: self.generate_calls.load(Ordering::SeqCst),
            max_in_flight: self.max_in_flight.load(Ordering::SeqCst),
            max_in_flight_tokens: self.max_in_flight_tokens.load(Ordering::SeqCst),
        }
    }

    pub fn reset(&self) {
        for counter in [
            &self.score_calls,
            &self.generate_calls,
            &self.max_in_flight,
            &self.max_in_flight_tokens,
        ] {
            counter.store(0, Ordering::SeqCst);
        }
    }
}

impl<B: ModelBackend> ModelBackend for Instrumented<B> {
    fn info(&self) -> &BackendInfo {
        self.inner.info()
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        self.inner.tokenize(text)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        self.inner.detokenize(tokens)
    }

    fn score(&self, tokens: &[TokenId]) -> Result<Distribution> {
        self.score_calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        let now_tokens = self
            .in_flight_tokens
            .fetch_add(tokens.len(), Ordering::SeqCst)
            + tokens.len();
        self.max_in_flight_tokens
            .fetch_max(now_tokens, Ordering::SeqCst);

        if !self.score_latency.is_zero() {
            thread::sleep(self.score_latency);
        }
        let result = self.inner.score(tokens);

        self.in_flight_tokens
            .fetch_sub(tokens.len(), Ordering::SeqCst);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }

    fn generate_streaming(
        &self,
        tokens: &[TokenId],
        cfg: &GenerationConfig,
        on_token: &mut dyn FnMut(TokenId),
    ) -> Result<()> {
        self.generate_calls.fetch_add(1, Ordering::SeqCst);
        let latency = self.token_latency;
        self.inner.generate_streaming(tokens, cfg, &mut |t| {
            if !latency.is_zero() {
                thread::sleep(latency);
            }
            on_token(t)
        })
    }
}
