//! Entropy versus realized loss of a model's next-token predictions.
//!
//! For sampled positions `t`, pairs the entropy of `p(. | x[..=t])` with the
//! loss `-ln p(x[t+1] | x[..=t])`. A model whose certainty tracks its
//! accuracy shows a strong positive correlation.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backend::{DecodeMode, GenerationConfig, ModelBackend};
use crate::entropy::entropy;
use crate::error::{Error, Result};
use crate::tokens::{TokenId, TokenSequence};

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyBin {
    pub lo: f64,
    pub hi: f64,
    pub mean_loss: f64,
    pub count: usize,
    /// Standard error of the mean loss; `None` with fewer than two samples.
    pub stderr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    /// `(entropy, loss)` per sampled position.
    pub pairs: Vec<(f64, f64)>,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    /// Entropy or loss has (numerically) zero variance; coefficients undefined.
    pub degenerate: bool,
    pub bins: Vec<EntropyBin>,
}

pub fn entropy_loss_correlation(
    backend: &dyn ModelBackend,
    eval_tokens: &[TokenId],
    stride: usize,
) -> Result<CorrelationReport> {
    if eval_tokens.len() < 2 {
        return Err(Error::InvalidInput(
            "need at least two evaluation tokens".into(),
        ));
    }
    if stride == 0 {
        return Err(Error::ConfigInvalid("stride must be positive".into()));
    }
    let window = backend.info().context_window;
    let mut pairs = Vec::new();
    for t in (0..eval_tokens.len() - 1).step_by(stride) {
        let ctx = &eval_tokens[(t + 1).saturating_sub(window)..=t];
        let dist = backend.score(ctx)?;
        let next = eval_tokens[t + 1] as usize;
        if next >= dist.vocab_size() {
            return Err(Error::TokenOutOfVocab {
                token: next as TokenId,
                vocab_size: dist.vocab_size(),
            });
        }
        pairs.push((entropy(&dist), -dist.logprob(next)));
    }
    Ok(CorrelationReport::from_pairs(pairs, DEFAULT_BINS))
}

impl CorrelationReport {
    pub fn from_pairs(pairs: Vec<(f64, f64)>, bins: usize) -> Self {
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let degenerate = is_constant(&xs) || is_constant(&ys);
        let (pearson, spearman) = if degenerate {
            (None, None)
        } else {
            (pearson(&xs, &ys), pearson(&ranks(&xs), &ranks(&ys)))
        };
        let bins = bin_by_entropy(&pairs, bins.max(1));
        Self {
            pairs,
            pearson,
            spearman,
            degenerate,
            bins,
        }
    }

    pub fn positions(&self) -> usize {
        self.pairs.len()
    }

    pub fn rebin(&self, bins: usize) -> Self {
        Self::from_pairs(self.pairs.clone(), bins)
    }

    /// Adjacent bin pairs (with at least two samples each) whose mean loss
    /// decreases by more than one standard error per bin:
    /// `mean[j] + se[j] < mean[i] - se[i]` for consecutive populated bins `i < j`.
    pub fn monotonicity_violations(&self) -> Vec<(usize, usize)> {
        let populated: Vec<(usize, &EntropyBin)> = self
            .bins
            .iter()
            .enumerate()
            .filter(|(_, b)| b.stderr.is_some())
            .collect();
        populated
            .windows(2)
            .filter_map(|w| {
                let (i, a) = w[0];
                let (j, b) = w[1];
                let (sa, sb) = (a.stderr.unwrap(), b.stderr.unwrap());
                (b.mean_loss + sb < a.mean_loss - sa).then_some((i, j))
            })
            .collect()
    }

    /// CSV rows `entropy_bin_lo,entropy_bin_hi,mean_loss,count,stderr`,
    /// followed by a `#` summary line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("entropy_bin_lo,entropy_bin_hi,mean_loss,count,stderr\n");
        for b in &self.bins {
            let mean = if b.count > 0 {
                format!("{:.6}", b.mean_loss)
            } else {
                String::new()
            };
            let se = b.stderr.map(|s| format!("{s:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{:.6},{:.6},{mean},{},{se}", b.lo, b.hi, b.count);
        }
        out.push_str(&self.summary());
        out.push('\n');
        out
    }

    pub fn summary(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.6}"));
        format!(
            "# positions={} pearson={} spearman={} degenerate={}",
            self.positions(),
            fmt(self.pearson),
            fmt(self.spearman),
            self.degenerate
        )
    }
}

fn is_constant(v: &[f64]) -> bool {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    v.len() < 2 || hi - lo <= 1e-12 * hi.abs().max(1.0)
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let denom = (sxx * syy).sqrt();
    (denom > 0.0).then(|| sxy / denom)
}

/// 1-based ranks with ties assigned their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn bin_by_entropy(pairs: &[(f64, f64)], bins: usize) -> Vec<EntropyBin> {
    if pairs.is_empty() {
        return Vec::new();
    }
    let lo = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = pairs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let bins = if hi > lo { bins } else { 1 };
    let width = (hi - lo) / bins as f64;
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); bins];
    for &(h, loss) in pairs {
        let idx = if width > 0.0 {
            (((h - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        members[idx].push(loss);
    }
    members
        .into_iter()
        .enumerate()
        .map(|(i, losses)| {
            let n = losses.len();
            let mean = if n > 0 {
                losses.iter().sum::<f64>() / n as f64
            } else {
                0.0
            };
            let stderr = (n >= 2).then(|| {
                let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            });
            EntropyBin {
                lo: lo + i as f64 * width,
                hi: if i + 1 == bins {
                    hi
                } else {
                    lo + (i + 1) as f64 * width
                },
                mean_loss: mean,
                count: n,
                stderr,
            }
        })
        .collect()
}

/// Samples `len` tokens from the backend itself, continuing `prompt`.
pub fn self_generate(
    backend: &dyn ModelBackend,
    prompt: &[TokenId],
    len: usize,
    seed: u64,
) -> Result<TokenSequence> {
    let cfg = GenerationConfig {
        max_new_tokens: len,
        mode: DecodeMode::TopP { p: 1.0 },
        seed: Some(seed),
    };
    let mut out = prompt.to_vec();
    out.extend_from_slice(&backend.generate(prompt, &cfg)?);
    Ok(out.into())
}

/// Text drawn from a random first-order Markov chain over 32 symbols. Every
/// transition has positive probability, and the sharpness of each state's
/// successor distribution ranges from uniform to nearly deterministic, so a
/// bigram model trained on it has strongly state-dependent predictive entropy.
pub fn synthetic_markov_corpus(seed: u64, len: usize) -> String {
    const SYMBOLS: &[u8] = b"abcdefghijklmnopqrstuvwxyz .,;!?";
    let n = SYMBOLS.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cumulative: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let sharpness = 10.0 * i as f64 / (n - 1) as f64;
            let mut acc = 0.0;
            (0..n)
                .map(|_| {
                    acc += (sharpness * rng.random_range(-1.0..1.0f64)).exp();
                    acc
                })
                .collect()
        })
        .collect();
    let mut state = 0usize;
    let mut out = String::with_capacity(len);
    for _ in 0..len {
        let row = &cumulative[state];
        let u = rng.random_range(0.0..row[n - 1]);
        state = row.partition_point(|&c| c <= u).min(n - 1);
        out.push(SYMBOLS[state] as char);
    }
    out
}
