//! Decomposition of a long token sequence into fixed-size sub-contexts.
//!
//! A sequence longer than the model window is split into a trailing task
//! suffix and the content before it. The content is cut into uniform,
//! overlapping windows; each window is wrapped with the leading header tokens
//! and the task suffix to form one sub-context that fits the model window.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokens::{TokenId, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentationConfig {
    /// Segment length in tokens.
    pub window: usize,
    /// Minimum overlap between adjacent segments.
    pub overlap: usize,
    /// Length of the trailing task suffix.
    pub task_len: usize,
    /// Number of leading tokens prepended to every sub-context.
    pub header_len: usize,
    /// Model context window.
    pub context_window: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            window: 512,
            overlap: 128,
            task_len: 128,
            header_len: 128,
            context_window: 2048,
        }
    }
}

impl SegmentationConfig {
    /// Settings for a model with a 4096-token window: segments of 1024.
    pub fn for_4k_window() -> Self {
        Self {
            window: 1024,
            context_window: 4096,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.overlap == 0 || self.overlap >= self.window {
            return Err(Error::ConfigInvalid(format!(
                "overlap must satisfy 0 < overlap < window (overlap={}, window={})",
                self.overlap, self.window
            )));
        }
        if self.task_len == 0 {
            return Err(Error::ConfigInvalid("task_len must be positive".into()));
        }
        if self.subcontext_len() > self.context_window {
            return Err(Error::ConfigInvalid(format!(
                "header_len + window + task_len must not exceed context_window ({} + {} + {} > {})",
                self.header_len, self.window, self.task_len, self.context_window
            )));
        }
        Ok(())
    }

    /// Token length of every sub-context.
    pub fn subcontext_len(&self) -> usize {
        self.header_len + self.window + self.task_len
    }

    pub fn stride(&self) -> usize {
        self.window - self.overlap
    }
}

/// Half-open token range `[start, end)` into the content sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Segment {
    pub index: usize,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn contains(&self, range: &Range<usize>) -> bool {
        self.start <= range.start && range.end <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubContext {
    pub segment: Segment,
    pub tokens: TokenSequence,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub original: TokenSequence,
    pub config: SegmentationConfig,
    pub header: Range<usize>,
    pub content: Range<usize>,
    pub task: Range<usize>,
    pub segments: Vec<Segment>,
    /// The sequence already fits the window and is used unchanged.
    pub bypass: bool,
}

impl Decomposition {
    pub fn header_tokens(&self) -> &[TokenId] {
        &self.original[self.header.clone()]
    }

    pub fn task_tokens(&self) -> &[TokenId] {
        &self.original[self.task.clone()]
    }

    pub fn segment_tokens(&self, segment: &Segment) -> &[TokenId] {
        &self.original[self.content.start + segment.start..self.content.start + segment.end]
    }

    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }

    /// Assembles every sub-context. Each carries its own copy of the header
    /// and task tokens, so prefer [`assemble_subcontext`] for very long inputs.
    pub fn sub_contexts(&self) -> Vec<SubContext> {
        (0..self.segments.len())
            .map(|i| assemble_subcontext(self, i).expect("index in range"))
            .collect()
    }
}

pub fn decompose(seq: &TokenSequence, cfg: &SegmentationConfig) -> Result<Decomposition> {
    cfg.validate()?;
    let len = seq.len();
    if len < cfg.task_len + 1 {
        return Err(Error::SequenceTooShort {
            len,
            min: cfg.task_len + 1,
        });
    }
    if len <= cfg.context_window {
        return Ok(Decomposition {
            original: seq.clone(),
            config: *cfg,
            header: 0..0,
            content: 0..len,
            task: len..len,
            segments: Vec::new(),
            bypass: true,
        });
    }
    let content = 0..len - cfg.task_len;
    // len > C >= H + W + T, so the header always lies inside the content.
    let header = 0..cfg.header_len;
    let segments = segment_ranges(content.len(), cfg.window, cfg.overlap)?;
    Ok(Decomposition {
        original: seq.clone(),
        config: *cfg,
        header,
        content,
        task: len - cfg.task_len..len,
        segments,
        bypass: false,
    })
}

pub fn segment_content(content: &[TokenId], cfg: &SegmentationConfig) -> Result<Vec<Segment>> {
    cfg.validate()?;
    segment_ranges(content.len(), cfg.window, cfg.overlap)
}

/// Overlapped sliding-window segmentation of `content_len` tokens.
///
/// Windows advance by `window - overlap`; the last window is end-aligned to
/// the content so every segment has length `window`. Content shorter than a
/// window yields a single short segment.
pub fn segment_ranges(content_len: usize, window: usize, overlap: usize) -> Result<Vec<Segment>> {
    if content_len == 0 {
        return Err(Error::EmptyContent);
    }
    if overlap == 0 || overlap >= window {
        return Err(Error::ConfigInvalid(format!(
            "overlap must satisfy 0 < overlap < window (overlap={overlap}, window={window})"
        )));
    }
    if content_len <= window {
        return Ok(vec![Segment {
            index: 0,
            start: 0,
            end: content_len,
        }]);
    }
    let stride = window - overlap;
    let count = (content_len - window).div_ceil(stride) + 1;
    let mut segments: Vec<Segment> = (0..count - 1)
        .map(|i| Segment {
            index: i,
            start: i * stride,
            end: i * stride + window,
        })
        .collect();
    segments.push(Segment {
        index: count - 1,
        start: content_len - window,
        end: content_len,
    });
    Ok(segments)
}

/// Header, then segment `index`, then the task suffix. The header is not
/// deduplicated against segment 0.
pub fn assemble_subcontext(d: &Decomposition, index: usize) -> Result<SubContext> {
    let segment = *d.segments.get(index).ok_or(Error::IndexOutOfRange {
        index,
        len: d.segments.len(),
    })?;
    let mut tokens = Vec::with_capacity(d.config.subcontext_len());
    tokens.extend_from_slice(d.header_tokens());
    tokens.extend_from_slice(d.segment_tokens(&segment));
    tokens.extend_from_slice(d.task_tokens());
    Ok(SubContext {
        segment,
        tokens: tokens.into(),
    })
}
