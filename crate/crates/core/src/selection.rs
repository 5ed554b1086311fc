//! Top-k segment selection, key-context splicing, and the end-to-end pipeline.

use serde::{Deserialize, Serialize};

use crate::backend::{GenerationConfig, ModelBackend};
use crate::error::{Error, Result};
use crate::pipeline::{decompose, Decomposition, SegmentationConfig};
use crate::scoring::{score_decomposition, SchedulerConfig, SegmentScore};
use crate::tokens::{TokenId, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub k: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { k: 3 }
    }
}

impl SelectionConfig {
    /// Checks `k >= 1` and that `k` full segments plus header and task fit the window.
    pub fn validate(&self, seg: &SegmentationConfig) -> Result<()> {
        if self.k == 0 {
            return Err(Error::ConfigInvalid("k must be at least 1".into()));
        }
        let needed = key_context_len(seg, self.k);
        if needed > seg.context_window {
            return Err(Error::ConfigInvalid(format!(
                "header_len + k * window + task_len must not exceed context_window ({needed} > {})",
                seg.context_window
            )));
        }
        Ok(())
    }
}

fn key_context_len(seg: &SegmentationConfig, k: usize) -> usize {
    seg.header_len + k * seg.window + seg.task_len
}

/// Largest `k` whose key context fits the window.
pub fn max_feasible_k(seg: &SegmentationConfig) -> usize {
    seg.context_window
        .saturating_sub(seg.header_len + seg.task_len)
        / seg.window.max(1)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyContext {
    pub tokens: TokenSequence,
    /// Chosen segments in ascending (chronological) order.
    pub selected_indices: Vec<usize>,
    pub budget_used: usize,
}

/// The `k` lowest-entropy segments, ties to the smaller index, returned in
/// ascending index order.
pub fn select_topk(scores: &[SegmentScore], cfg: &SelectionConfig) -> Vec<usize> {
    let mut ranked: Vec<&SegmentScore> = scores.iter().collect();
    ranked.sort_by(|a, b| {
        a.entropy
            .total_cmp(&b.entropy)
            .then(a.segment_index.cmp(&b.segment_index))
    });
    let mut chosen: Vec<usize> = ranked
        .into_iter()
        .take(cfg.k)
        .map(|s| s.segment_index)
        .collect();
    chosen.sort_unstable();
    chosen
}

/// Header, the selected segments in order, then the task suffix. Overlapping
/// segments are concatenated as-is.
pub fn splice(d: &Decomposition, selected: &[usize]) -> Result<KeyContext> {
    if d.bypass {
        return Ok(KeyContext {
            tokens: d.original.clone(),
            selected_indices: Vec::new(),
            budget_used: d.original.len(),
        });
    }
    if let Some(w) = selected.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(format!(
            "selected segments must be strictly ascending, found {} before {}",
            w[0], w[1]
        )));
    }
    let m = d.num_segments();
    if let Some(&bad) = selected.iter().find(|&&i| i >= m) {
        return Err(Error::IndexOutOfRange { index: bad, len: m });
    }

    let used = d.header.len()
        + selected.iter().map(|&i| d.segments[i].len()).sum::<usize>()
        + d.task.len();
    if used > d.config.context_window {
        return Err(Error::BudgetExceeded {
            used,
            limit: d.config.context_window,
        });
    }
    let mut tokens: Vec<TokenId> = Vec::with_capacity(used);
    tokens.extend_from_slice(d.header_tokens());
    for &i in selected {
        tokens.extend_from_slice(d.segment_tokens(&d.segments[i]));
    }
    tokens.extend_from_slice(d.task_tokens());
    Ok(KeyContext {
        tokens: tokens.into(),
        selected_indices: selected.to_vec(),
        budget_used: used,
    })
}

/// Everything needed to run the pipeline once.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PipelineConfig {
    pub segmentation: SegmentationConfig,
    pub selection: SelectionConfig,
    pub scheduler: SchedulerConfig,
    pub generation: GenerationConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.segmentation.validate()?;
        self.selection.validate(&self.segmentation)?;
        self.scheduler
            .validate(self.segmentation.subcontext_len())?;
        self.generation.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub decomposition: Decomposition,
    /// Empty when the input bypassed segmentation.
    pub scores: Vec<SegmentScore>,
    pub key_context: KeyContext,
    pub generated: TokenSequence,
}

/// Builds the key context without generating: decompose, score, select, splice.
pub fn build_key_context(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    cfg: &PipelineConfig,
) -> Result<(Decomposition, Vec<SegmentScore>, KeyContext)> {
    cfg.validate()?;
    let d = decompose(seq, &cfg.segmentation)?;
    if d.bypass {
        let key = splice(&d, &[])?;
        return Ok((d, Vec::new(), key));
    }
    let scores = score_decomposition(backend, &d, &cfg.scheduler)?;
    let selected = select_topk(&scores, &cfg.selection);
    let key = splice(&d, &selected)?;
    Ok((d, scores, key))
}

/// Runs the full pipeline and generates from the key context.
pub fn run_pipeline(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    cfg: &PipelineConfig,
) -> Result<PipelineRun> {
    let (decomposition, scores, key_context) = build_key_context(backend, seq, cfg)?;
    let generated = backend.generate(&key_context.tokens, &cfg.generation)?;
    Ok(PipelineRun {
        decomposition,
        scores,
        key_context,
        generated,
    })
}
