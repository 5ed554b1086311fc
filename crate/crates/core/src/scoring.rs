//! Bounded-parallel entropy scoring of sub-contexts.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};

use crate::backend::ModelBackend;
use crate::entropy::entropy;
use crate::error::{Error, Result};
use crate::pipeline::{assemble_subcontext, Decomposition, SubContext};
use crate::tokens::TokenSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SegmentScore {
    pub segment_index: usize,
    /// Entropy of the next-token distribution, in nats.
    pub entropy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub max_parallel: usize,
    /// Upper bound on the summed length of sub-contexts in flight.
    pub token_budget: Option<usize>,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            max_parallel: 8,
            token_budget: None,
        }
    }
}

impl SchedulerConfig {
    pub fn sequential() -> Self {
        Self {
            max_parallel: 1,
            token_budget: None,
        }
    }

    pub fn validate(&self, subcontext_len: usize) -> Result<()> {
        if self.max_parallel == 0 {
            return Err(Error::ConfigInvalid(
                "max_parallel must be at least 1".into(),
            ));
        }
        if let Some(budget) = self.token_budget {
            if budget < subcontext_len {
                return Err(Error::ConfigInvalid(format!(
                    "token_budget {budget} is smaller than one sub-context ({subcontext_len} tokens)"
                )));
            }
        }
        Ok(())
    }
}

/// Scores already-assembled sub-contexts. Output is ordered by segment index.
pub fn score_subcontexts(
    backend: &dyn ModelBackend,
    subs: &[SubContext],
    sched: &SchedulerConfig,
) -> Result<Vec<SegmentScore>> {
    let longest = subs.iter().map(|s| s.tokens.len()).max().unwrap_or(0);
    sched.validate(longest)?;
    let mut scores = run_scheduled(backend, subs.len(), sched, |i| {
        Ok((subs[i].segment.index, subs[i].tokens.clone()))
    })?;
    scores.sort_by_key(|s| s.segment_index);
    Ok(scores)
}

/// Scores every segment of a decomposition, assembling each sub-context
/// inside the worker that scores it so at most `max_parallel` copies exist.
pub fn score_decomposition(
    backend: &dyn ModelBackend,
    d: &Decomposition,
    sched: &SchedulerConfig,
) -> Result<Vec<SegmentScore>> {
    sched.validate(d.config.subcontext_len())?;
    run_scheduled(backend, d.num_segments(), sched, |i| {
        let sc = assemble_subcontext(d, i)?;
        Ok((sc.segment.index, sc.tokens))
    })
}

/// Admission gate bounding the total tokens in flight.
struct TokenGate {
    budget: Option<usize>,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl TokenGate {
    fn acquire(&self, n: usize) {
        let Some(budget) = self.budget else { return };
        let mut used = self.in_flight.lock().unwrap();
        // A lone request larger than the budget is admitted rather than deadlocking.
        while *used > 0 && *used + n > budget {
            used = self.freed.wait(used).unwrap();
        }
        *used += n;
    }

    fn release(&self, n: usize) {
        if self.budget.is_none() {
            return;
        }
        *self.in_flight.lock().unwrap() -= n;
        self.freed.notify_all();
    }
}

/// Runs `count` scoring jobs on at most `max_parallel` worker threads.
/// Results are returned in job order; on failure, the error of the lowest
/// failing job is returned and no partial results escape.
fn run_scheduled<F>(
    backend: &dyn ModelBackend,
    count: usize,
    sched: &SchedulerConfig,
    job: F,
) -> Result<Vec<SegmentScore>>
where
    F: Fn(usize) -> Result<(usize, TokenSequence)> + Sync,
{
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let gate = TokenGate {
        budget: sched.token_budget,
        in_flight: Mutex::new(0),
        freed: Condvar::new(),
    };
    let slots: Vec<Mutex<Option<Result<SegmentScore>>>> =
        (0..count).map(|_| Mutex::new(None)).collect();

    let run_one = |i: usize| -> Result<SegmentScore> {
        let (segment_index, tokens) = job(i)?;
        gate.acquire(tokens.len());
        let dist = backend.score(&tokens);
        gate.release(tokens.len());
        let dist = dist.map_err(|e| Error::Backend {
            segment_index,
            source: Box::new(e),
        })?;
        Ok(SegmentScore {
            segment_index,
            entropy: entropy(&dist),
        })
    };

    let workers = sched.max_parallel.min(count).max(1);
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= count {
                    break;
                }
                let result = run_one(i);
                if result.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                *slots[i].lock().unwrap() = Some(result);
            });
        }
    });

    let mut out = Vec::with_capacity(count);
    for slot in slots {
        match slot.into_inner().unwrap() {
            Some(Ok(score)) => out.push(score),
            Some(Err(e)) => return Err(e),
            // Jobs are claimed in index order, so a skipped job always
            // follows the failure that stopped the workers.
            None => unreachable!("skipped job without an earlier failure"),
        }
    }
    Ok(out)
}
