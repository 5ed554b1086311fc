//! Needle-in-a-haystack harness.
//!
//! A needle sentence is placed at a controlled depth inside seeded filler
//! text, a question is appended, and each method is asked to generate the
//! answer. Recall is the fraction of runs whose output contains the answer
//! tokens contiguously.

use std::fmt::Write as _;
use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{byte_tokenize, ModelBackend};
use crate::error::{Error, Result};
use crate::eval::{method_context, HarnessConfig, Method};
use crate::pipeline::decompose;
use crate::tokens::{find_subsequence, TokenId, TokenSequence};

pub const DEFAULT_NEEDLE: &str = "The special magic number mentioned in this document is 48213.";
pub const DEFAULT_QUESTION: &str =
    " Question: What is the special magic number mentioned in the document? Answer:";
pub const DEFAULT_ANSWER: &str = "48213";

/// Haystack lengths used by default: 16k, 32k, 64k and 128k tokens.
pub const DEFAULT_LENGTHS: [usize; 4] = [16_384, 32_768, 65_536, 131_072];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeedleProbe {
    pub needle: TokenSequence,
    pub question: TokenSequence,
    pub answer: TokenSequence,
}

impl NeedleProbe {
    pub fn from_text(needle: &str, question: &str, answer: &str) -> Self {
        Self {
            needle: byte_tokenize(needle),
            question: byte_tokenize(question),
            answer: byte_tokenize(answer),
        }
    }
}

impl Default for NeedleProbe {
    fn default() -> Self {
        Self::from_text(DEFAULT_NEEDLE, DEFAULT_QUESTION, DEFAULT_ANSWER)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeedleTaskSpec {
    pub haystack_len: usize,
    pub depth_fraction: f64,
    pub probe: NeedleProbe,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Haystack {
    /// Filler with the needle, followed by the question.
    pub tokens: TokenSequence,
    pub needle: Range<usize>,
    /// Offset of the question suffix.
    pub question_start: usize,
}

/// Builds a seeded haystack: `haystack_len` tokens of byte-level filler with
/// the needle starting at `round(depth * (haystack_len - needle_len))`,
/// followed by the question.
pub fn generate_haystack(spec: &NeedleTaskSpec) -> Result<Haystack> {
    let probe = &spec.probe;
    let needle_len = probe.needle.len();
    if needle_len == 0 {
        return Err(Error::ConfigInvalid("needle must be non-empty".into()));
    }
    if needle_len > spec.haystack_len {
        return Err(Error::NeedleTooLong {
            needle: needle_len,
            haystack: spec.haystack_len,
        });
    }
    if !(0.0..=1.0).contains(&spec.depth_fraction) {
        return Err(Error::ConfigInvalid(format!(
            "depth_fraction must be in [0, 1], got {}",
            spec.depth_fraction
        )));
    }
    if find_subsequence(&probe.question, &probe.needle).is_some() {
        return Err(Error::ConfigInvalid(
            "question must not contain the needle".into(),
        ));
    }

    let offset = (spec.depth_fraction * (spec.haystack_len - needle_len) as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let filler_len = spec.haystack_len - needle_len;
    loop {
        let filler = filler_tokens(&mut rng, filler_len);
        let mut tokens = Vec::with_capacity(spec.haystack_len + probe.question.len());
        tokens.extend_from_slice(&filler[..offset]);
        tokens.extend_from_slice(&probe.needle);
        tokens.extend_from_slice(&filler[offset..]);
        tokens.extend_from_slice(&probe.question);
        if occurrences(&tokens, &probe.needle) == 1 {
            return Ok(Haystack {
                tokens: tokens.into(),
                needle: offset..offset + needle_len,
                question_start: spec.haystack_len,
            });
        }
        // Accidental extra occurrence: draw fresh filler from the same stream.
    }
}

fn occurrences(haystack: &[TokenId], needle: &[TokenId]) -> usize {
    haystack
        .windows(needle.len())
        .filter(|w| *w == needle)
        .count()
}

/// Lowercase pseudo-words grouped into sentences, as bytes.
fn filler_tokens(rng: &mut ChaCha8Rng, len: usize) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(len + 16);
    while out.len() < len {
        let words = rng.random_range(4..14);
        for w in 0..words {
            let letters = rng.random_range(1..9);
            for _ in 0..letters {
                out.push(TokenId::from(b'a' + rng.random_range(0..26u8)));
            }
            out.push(if w + 1 == words { b'.' } else { b' ' } as TokenId);
        }
        out.push(TokenId::from(b' '));
    }
    out.truncate(len);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub lengths: Vec<usize>,
    pub depth_bins: usize,
    pub runs_per_cell: usize,
    pub seed: u64,
    pub probe: NeedleProbe,
    /// Worker threads used to execute independent runs.
    pub parallelism: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            lengths: DEFAULT_LENGTHS.to_vec(),
            depth_bins: 10,
            runs_per_cell: 10,
            seed: 0,
            probe: NeedleProbe::default(),
            parallelism: thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// Outcome of one needle run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub length: usize,
    pub depth_bin: usize,
    pub run: usize,
    pub seed: u64,
    pub depth_fraction: f64,
    /// Needle range within the full input sequence.
    pub needle_start: usize,
    pub needle_end: usize,
    pub total_len: usize,
    pub hit: bool,
    /// Needle crosses a segment boundary (only for the segmented method).
    pub straddles_segment: Option<bool>,
    /// Segments chosen for the key context (only for the segmented method).
    pub selected: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub method: Method,
    pub lengths: Vec<usize>,
    pub depth_bins: usize,
    pub runs_per_cell: usize,
    /// `recall[length_index][depth_bin]`.
    pub recall: Vec<Vec<f64>>,
    pub runs: Vec<RunRecord>,
}

/// Deterministic per-run seed.
pub fn run_seed(base: u64, length: usize, depth_bin: usize, run: usize) -> u64 {
    let mut x = base;
    for v in [length as u64, depth_bin as u64, run as u64] {
        x = splitmix64(x ^ splitmix64(v));
    }
    x
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs every (length, depth bin) cell `runs_per_cell` times. Within bin `d`
/// of `D`, the depth fraction is drawn uniformly from `[d/D, (d+1)/D)`.
pub fn run_needle_grid(
    backend: &dyn ModelBackend,
    method: Method,
    harness: &HarnessConfig,
    grid: &GridConfig,
) -> Result<GridResult> {
    harness.validate(method)?;
    if grid.depth_bins == 0 || grid.runs_per_cell == 0 || grid.lengths.is_empty() {
        return Err(Error::ConfigInvalid(
            "grid needs at least one length, depth bin and run".into(),
        ));
    }

    let mut jobs = Vec::new();
    for &length in &grid.lengths {
        for bin in 0..grid.depth_bins {
            for run in 0..grid.runs_per_cell {
                jobs.push((length, bin, run));
            }
        }
    }

    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<Result<RunRecord>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let workers = grid.parallelism.clamp(1, jobs.len());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(length, bin, run)) = jobs.get(i) else {
                    break;
                };
                let record = needle_run(backend, method, harness, grid, length, bin, run);
                let failed = record.is_err();
                *results[i].lock().unwrap() = Some(record);
                if failed {
                    next.store(jobs.len(), Ordering::SeqCst);
                }
            });
        }
    });

    let mut runs = Vec::with_capacity(jobs.len());
    for slot in results {
        match slot.into_inner().unwrap() {
            Some(Ok(r)) => runs.push(r),
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }
    if runs.len() != jobs.len() {
        return Err(Error::InvalidInput("needle grid aborted".into()));
    }

    let mut recall = vec![vec![0.0; grid.depth_bins]; grid.lengths.len()];
    for (li, row) in recall.iter_mut().enumerate() {
        for (bin, cell) in row.iter_mut().enumerate() {
            let hits = runs
                .iter()
                .filter(|r| r.length == grid.lengths[li] && r.depth_bin == bin && r.hit)
                .count();
            *cell = hits as f64 / grid.runs_per_cell as f64;
        }
    }
    Ok(GridResult {
        method,
        lengths: grid.lengths.clone(),
        depth_bins: grid.depth_bins,
        runs_per_cell: grid.runs_per_cell,
        recall,
        runs,
    })
}

fn needle_run(
    backend: &dyn ModelBackend,
    method: Method,
    harness: &HarnessConfig,
    grid: &GridConfig,
    length: usize,
    bin: usize,
    run: usize,
) -> Result<RunRecord> {
    let seed = run_seed(grid.seed, length, bin, run);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = bin as f64 / grid.depth_bins as f64;
    let hi = (bin + 1) as f64 / grid.depth_bins as f64;
    let depth_fraction = rng.random_range(lo..hi);
    let spec = NeedleTaskSpec {
        haystack_len: length,
        depth_fraction,
        probe: grid.probe.clone(),
        seed,
    };
    let hay = generate_haystack(&spec)?;
    let prepared = method_context(backend, method, &hay.tokens, harness)?;
    let generated = backend.generate(&prepared.tokens, &harness.pipeline.generation)?;
    let hit = find_subsequence(&generated, &grid.probe.answer).is_some();

    let (straddles_segment, selected) = match method {
        Method::Xl3m => {
            let d = decompose(&hay.tokens, &harness.pipeline.segmentation)?;
            let straddles = d.segments.iter().any(|s| {
                let overlaps = s.start < hay.needle.end && hay.needle.start < s.end;
                overlaps && !s.contains(&hay.needle)
            });
            (Some(straddles), prepared.selected)
        }
        _ => (None, None),
    };

    Ok(RunRecord {
        length,
        depth_bin: bin,
        run,
        seed,
        depth_fraction,
        needle_start: hay.needle.start,
        needle_end: hay.needle.end,
        total_len: hay.tokens.len(),
        hit,
        straddles_segment,
        selected,
    })
}

impl GridResult {
    /// CSV with header `length,depth_decile,recall,runs`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("length,depth_decile,recall,runs\n");
        for (li, &length) in self.lengths.iter().enumerate() {
            for bin in 0..self.depth_bins {
                let _ = writeln!(
                    out,
                    "{length},{bin},{:.4},{}",
                    self.recall[li][bin], self.runs_per_cell
                );
            }
        }
        out
    }

    /// Text heatmap: one row per length, one column per depth bin.
    pub fn heatmap(&self) -> String {
        const SHADES: &[u8] = b" .:-=+*#%@";
        let mut out = String::new();
        let _ = writeln!(
            out,
            "recall ({}, {} runs per cell)",
            self.method, self.runs_per_cell
        );
        let _ = write!(out, "{:>8} |", "length");
        for bin in 0..self.depth_bins {
            let _ = write!(out, " {:>4}", bin * 100 / self.depth_bins);
        }
        out.push_str("  (depth %)\n");
        for (li, &length) in self.lengths.iter().enumerate() {
            let _ = write!(out, "{length:>8} |");
            for &r in &self.recall[li] {
                let shade = SHADES
                    [((r * (SHADES.len() - 1) as f64).round() as usize).min(SHADES.len() - 1)];
                let _ = write!(out, " {:>3}{}", (r * 100.0).round() as u32, shade as char);
            }
            out.push('\n');
        }
        out
    }

    pub fn straddle_count(&self) -> usize {
        self.runs
            .iter()
            .filter(|r| r.straddles_segment == Some(true))
            .count()
    }
}
