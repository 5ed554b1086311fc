use std::time::{Duration, Instant};

use xl3m::backend::{BackendInfo, GenerationConfig, Instrumented, ModelBackend, NgramBackend};
use xl3m::entropy::Distribution;
use xl3m::eval::correlation::synthetic_markov_corpus;
use xl3m::pipeline::{decompose, SegmentationConfig};
use xl3m::scoring::{score_decomposition, score_subcontexts, SchedulerConfig};
use xl3m::{Error, Result, TokenId, TokenSequence};

fn ngram() -> NgramBackend {
    NgramBackend::from_text(&synthetic_markov_corpus(1, 20_000), 3, 0.1).unwrap()
}

fn long_input(len: usize) -> TokenSequence {
    synthetic_markov_corpus(99, len)
        .bytes()
        .map(TokenId::from)
        .collect()
}

/// Sequence whose content splits into exactly `m` segments under the default config.
fn input_with_segments(m: usize) -> TokenSequence {
    // L_c = W + (m - 1) * S, plus the task suffix.
    long_input(512 + (m - 1) * 384 + 128)
}

#[test]
fn high_water_mark_respects_max_parallel() {
    let seq = input_with_segments(20);
    let d = decompose(&seq, &SegmentationConfig::default()).unwrap();
    assert_eq!(d.num_segments(), 20);
    for p in [1usize, 2, 4, 16] {
        let b = Instrumented::new(ngram()).with_score_latency(Duration::from_millis(5));
        let sched = SchedulerConfig {
            max_parallel: p,
            token_budget: None,
        };
        score_decomposition(&b, &d, &sched).unwrap();
        let stats = b.stats();
        assert_eq!(stats.score_calls, 20);
        assert!(stats.max_in_flight <= p, "p={p}: {stats:?}");
        assert!(stats.max_in_flight >= 1);
    }
}

#[test]
fn order_determinism_across_parallelism() {
    let seq = input_with_segments(13);
    let d = decompose(&seq, &SegmentationConfig::default()).unwrap();
    let m = ngram();
    let runs: Vec<_> = [1usize, 4, 16]
        .iter()
        .map(|&p| {
            let sched = SchedulerConfig {
                max_parallel: p,
                token_budget: None,
            };
            score_decomposition(&m, &d, &sched).unwrap()
        })
        .collect();
    assert_eq!(runs[0].len(), 13);
    for (i, s) in runs[0].iter().enumerate() {
        assert_eq!(s.segment_index, i);
    }
    // Bitwise identical entropies, not merely close.
    for r in &runs[1..] {
        assert_eq!(r, &runs[0]);
    }
    let subs = d.sub_contexts();
    let direct = score_subcontexts(&m, &subs, &SchedulerConfig::default()).unwrap();
    assert_eq!(direct, runs[0]);
}

#[test]
fn ten_segments_four_workers_is_three_waves() {
    let seq = input_with_segments(10);
    let d = decompose(&seq, &SegmentationConfig::default()).unwrap();
    assert_eq!(d.num_segments(), 10);
    let latency = Duration::from_millis(40);
    let b = Instrumented::new(ngram()).with_score_latency(latency);
    let sched = SchedulerConfig {
        max_parallel: 4,
        token_budget: None,
    };
    let start = Instant::now();
    score_decomposition(&b, &d, &sched).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(b.stats().max_in_flight, 4);
    // ceil(10 / 4) = 3 rounds of latency, well short of 10 sequential calls.
    assert!(elapsed >= latency * 3, "{elapsed:?}");
    assert!(elapsed < latency * 8, "{elapsed:?}");
}

#[test]
fn token_budget_bounds_tokens_in_flight() {
    let seq = input_with_segments(12);
    let cfg = SegmentationConfig::default();
    let d = decompose(&seq, &cfg).unwrap();
    let sub = cfg.subcontext_len();
    let b = Instrumented::new(ngram()).with_score_latency(Duration::from_millis(5));
    let sched = SchedulerConfig {
        max_parallel: 8,
        token_budget: Some(2 * sub + 10),
    };
    score_decomposition(&b, &d, &sched).unwrap();
    let stats = b.stats();
    assert!(stats.max_in_flight_tokens <= 2 * sub + 10, "{stats:?}");
    assert!(stats.max_in_flight <= 2);

    let too_small = SchedulerConfig {
        max_parallel: 8,
        token_budget: Some(sub - 1),
    };
    assert!(matches!(
        score_decomposition(&b, &d, &too_small),
        Err(Error::ConfigInvalid(_))
    ));
}

/// Fails scoring of any input that contains `poison`.
struct Flaky {
    inner: NgramBackend,
    poison: Vec<TokenId>,
}

impl ModelBackend for Flaky {
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
        if tokens.windows(self.poison.len()).any(|w| w == self.poison) {
            return Err(Error::Transport("injected".into()));
        }
        self.inner.score(tokens)
    }
    fn generate_streaming(
        &self,
        tokens: &[TokenId],
        cfg: &GenerationConfig,
        on_token: &mut dyn FnMut(TokenId),
    ) -> Result<()> {
        self.inner.generate_streaming(tokens, cfg, on_token)
    }
}

#[test]
fn failure_reports_lowest_failing_segment() {
    let mut tokens = input_with_segments(10).to_vec();
    let poison: Vec<TokenId> = vec![300, 301, 302];
    // Inside segment 6 only (segments start at multiples of 384).
    let at = 6 * 384 + 200;
    tokens[at..at + 3].copy_from_slice(&poison);
    let at = 8 * 384 + 200;
    tokens[at..at + 3].copy_from_slice(&poison);
    let seq: TokenSequence = tokens.into();
    let d = decompose(&seq, &SegmentationConfig::default()).unwrap();
    let b = Flaky {
        inner: ngram().with_context_window(4096),
        poison,
    };
    for p in [1usize, 4, 16] {
        let sched = SchedulerConfig {
            max_parallel: p,
            token_budget: None,
        };
        match score_decomposition(&b, &d, &sched) {
            Err(Error::Backend {
                segment_index,
                source,
            }) => {
                assert_eq!(segment_index, 6, "p={p}");
                assert!(matches!(*source, Error::Transport(_)));
            }
            other => panic!("expected backend error, got {other:?}"),
        }
    }
}
