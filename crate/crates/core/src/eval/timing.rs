//! Prefill/decode timing split.
//!
//! Prefill runs from the start of the request until the first generated token
//! is available; for the segmented method that includes segmentation,
//! scoring and splicing. Decode covers the remaining tokens. All three
//! durations come from the same three instants of a monotonic clock, so
//! `total == prefill + decode` up to float rounding.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::backend::{GenerationConfig, ModelBackend};
use crate::error::Result;
use crate::eval::{method_context, HarnessConfig, Method};
use crate::tokens::TokenSequence;

pub const DEFAULT_DECODE_LEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingReport {
    pub method: Method,
    pub total_s: f64,
    pub prefill_s: f64,
    pub decode_s: f64,
    pub decoded_tokens: usize,
}

impl TimingReport {
    /// Relative gap between `total` and `prefill + decode`.
    pub fn additivity_error(&self) -> f64 {
        let gap = (self.total_s - (self.prefill_s + self.decode_s)).abs();
        if self.total_s > 0.0 {
            gap / self.total_s
        } else {
            gap
        }
    }
}

pub fn measure_timing(
    backend: &dyn ModelBackend,
    method: Method,
    seq: &TokenSequence,
    cfg: &HarnessConfig,
    decode_len: usize,
) -> Result<TimingReport> {
    cfg.validate(method)?;
    let gen = GenerationConfig {
        max_new_tokens: decode_len,
        ..cfg.pipeline.generation
    };
    gen.validate()?;

    let start = Instant::now();
    let prepared = method_context(backend, method, seq, cfg)?;
    let mut first: Option<Instant> = None;
    let mut decoded = 0usize;
    backend.generate_streaming(&prepared.tokens, &gen, &mut |_| {
        if first.is_none() {
            first = Some(Instant::now());
        }
        decoded += 1;
    })?;
    let end = Instant::now();
    let first = first.unwrap_or(end);

    let prefill = first.duration_since(start);
    let decode = end.duration_since(first);
    Ok(TimingReport {
        method,
        total_s: end.duration_since(start).as_secs_f64(),
        prefill_s: prefill.as_secs_f64(),
        decode_s: decode.as_secs_f64(),
        decoded_tokens: decoded,
    })
}

/// Plain-text table, one row per report.
pub fn timing_table(reports: &[TimingReport]) -> String {
    let mut out = format!(
        "{:<16} {:>10} {:>10} {:>10} {:>8}\n",
        "method", "total_s", "prefill_s", "decode_s", "tokens"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<16} {:>10.4} {:>10.4} {:>10.4} {:>8}",
            r.method.as_str(),
            r.total_s,
            r.prefill_s,
            r.decode_s,
            r.decoded_tokens
        );
    }
    out
}
