//! Next-token distributions and their Shannon entropy, in nats.

use crate::error::{Error, Result};

/// Absolute tolerance on `logsumexp(logprobs)`.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-4;

/// Below this, `exp` underflows to zero in f64.
const LOG_UNDERFLOW: f64 = -745.0;

/// A full-vocabulary next-token distribution stored as natural-log probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    logprobs: Vec<f64>,
}

impl Distribution {
    /// Validates normalization and that every entry is a log-probability.
    /// `-inf` entries (zero probability) are allowed.
    pub fn from_logprobs(logprobs: Vec<f64>) -> Result<Self> {
        if logprobs.is_empty() {
            return Err(Error::MalformedDistribution("empty distribution".into()));
        }
        for (i, &lp) in logprobs.iter().enumerate() {
            if lp.is_nan() || lp == f64::INFINITY {
                return Err(Error::MalformedDistribution(format!(
                    "entry {i} is {lp}, not a log-probability"
                )));
            }
            if lp > NORMALIZATION_TOLERANCE {
                return Err(Error::MalformedDistribution(format!(
                    "entry {i} has log-probability {lp} > 0"
                )));
            }
        }
        let lse = logsumexp(&logprobs);
        if !(lse.abs() <= NORMALIZATION_TOLERANCE) {
            return Err(Error::MalformedDistribution(format!(
                "probability mass {:.6} is not 1 (logsumexp = {lse:.3e})",
                lse.exp()
            )));
        }
        Ok(Self { logprobs })
    }

    /// Builds a distribution from probabilities.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        if let Some(i) = probs.iter().position(|p| !(*p >= 0.0)) {
            return Err(Error::MalformedDistribution(format!(
                "entry {i} is not a probability"
            )));
        }
        Self::from_logprobs(probs.iter().map(|p| p.ln()).collect())
    }

    /// Uniform distribution over `vocab_size` tokens.
    pub fn uniform(vocab_size: usize) -> Self {
        assert!(vocab_size > 0);
        Self {
            logprobs: vec![-(vocab_size as f64).ln(); vocab_size],
        }
    }

    /// Normalizes arbitrary finite logits with log-softmax.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        check_finite(logits)?;
        let lse = logsumexp(logits);
        Self::from_logprobs(logits.iter().map(|l| l - lse).collect())
    }

    pub fn vocab_size(&self) -> usize {
        self.logprobs.len()
    }

    pub fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }

    pub fn logprob(&self, token: usize) -> f64 {
        self.logprobs[token]
    }

    /// Most likely token; ties go to the smallest id.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &lp) in self.logprobs.iter().enumerate() {
            if lp > self.logprobs[best] {
                best = i;
            }
        }
        best
    }

    pub fn entropy(&self) -> f64 {
        entropy(self)
    }
}

/// Shannon entropy `-sum p ln p` evaluated in log space.
pub fn entropy(d: &Distribution) -> f64 {
    let mut acc = NeumaierSum::default();
    for &lp in &d.logprobs {
        if lp < LOG_UNDERFLOW {
            continue;
        }
        acc.add(-lp.exp() * lp);
    }
    acc.total().max(0.0)
}

/// Entropy of `softmax(logits)` without materializing the distribution.
///
/// With `M = max(logits)` and `Z = sum exp(l - M)`, the entropy is
/// `ln Z - sum (exp(l - M) / Z) (l - M)`. The maximal term contributes
/// exactly 1 to `Z`, so `ln Z` is taken as `ln_1p` of the remaining mass to
/// stay accurate when the distribution is nearly one-hot.
pub fn entropy_from_logits(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::MalformedDistribution("empty logits".into()));
    }
    check_finite(logits)?;
    let (argmax, max) =
        logits
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, l)| {
                if l > best.1 {
                    (i, l)
                } else {
                    best
                }
            });
    let mut rest = NeumaierSum::default();
    let mut weighted = NeumaierSum::default();
    for (i, &l) in logits.iter().enumerate() {
        if i == argmax {
            continue;
        }
        let shifted = l - max;
        let e = shifted.exp();
        if e == 0.0 {
            // shifted may be -inf when the logit range overflows.
            continue;
        }
        rest.add(e);
        weighted.add(e * shifted);
    }
    let rest = rest.total();
    Ok((rest.ln_1p() - weighted.total() / (1.0 + rest)).max(0.0))
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    let mut sum = NeumaierSum::default();
    for &v in values {
        sum.add((v - max).exp());
    }
    max + sum.total().ln()
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFiniteInput(i)),
        None => Ok(()),
    }
}

/// Compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}
