//! Flat JSON run configuration.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use xl3m::backend::{
    DecodeMode, GenerationConfig, ModelBackend, NgramBackend, OracleBackend, RemoteBackend,
    RetryPolicy, BYTE_VOCAB,
};
use xl3m::eval::correlation::synthetic_markov_corpus;
use xl3m::eval::needle::{NeedleProbe, DEFAULT_ANSWER, DEFAULT_NEEDLE, DEFAULT_QUESTION};
use xl3m::eval::HarnessConfig;
use xl3m::pipeline::SegmentationConfig;
use xl3m::scoring::SchedulerConfig;
use xl3m::selection::{PipelineConfig, SelectionConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Deterministic needle oracle.
    Oracle,
    /// Byte-level n-gram model.
    Ngram,
    /// Model server over HTTP.
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum DecodeKind {
    Greedy,
    TopK,
    TopP,
}

/// Everything a command needs. Every field is optional in the JSON file;
/// missing fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub url: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,

    /// Needle sentence known to the oracle and planted by the needle grid.
    pub needle: String,
    pub question: String,
    pub answer: String,

    /// Training text for the n-gram backend; a seeded synthetic corpus when unset.
    pub ngram_corpus: Option<PathBuf>,
    pub ngram_order: usize,
    pub ngram_alpha: f64,

    pub window: usize,
    pub overlap: usize,
    pub task_len: usize,
    pub header_len: usize,
    pub context_window: usize,
    pub k: usize,
    pub max_parallel: usize,
    pub token_budget: Option<usize>,

    pub max_new_tokens: usize,
    pub decode: DecodeKind,
    pub top_k: usize,
    pub top_p: f64,
    pub seed: u64,

    pub sink_len: usize,
    pub recent_len: usize,

    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let seg = SegmentationConfig::default();
        let harness = HarnessConfig::default();
        Self {
            backend: BackendKind::Oracle,
            url: None,
            timeout_ms: 30_000,
            max_retries: RetryPolicy::default().max_retries,
            needle: DEFAULT_NEEDLE.into(),
            question: DEFAULT_QUESTION.into(),
            answer: DEFAULT_ANSWER.into(),
            ngram_corpus: None,
            ngram_order: 2,
            ngram_alpha: 0.1,
            window: seg.window,
            overlap: seg.overlap,
            task_len: seg.task_len,
            header_len: seg.header_len,
            context_window: seg.context_window,
            k: SelectionConfig::default().k,
            max_parallel: SchedulerConfig::default().max_parallel,
            token_budget: None,
            max_new_tokens: GenerationConfig::default().max_new_tokens,
            decode: DecodeKind::Greedy,
            top_k: 40,
            top_p: 0.9,
            seed: 0,
            sink_len: harness.sink_len,
            recent_len: harness.recent_len,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn segmentation(&self) -> SegmentationConfig {
        SegmentationConfig {
            window: self.window,
            overlap: self.overlap,
            task_len: self.task_len,
            header_len: self.header_len,
            context_window: self.context_window,
        }
    }

    pub fn generation(&self) -> GenerationConfig {
        let mode = match self.decode {
            DecodeKind::Greedy => DecodeMode::Greedy,
            DecodeKind::TopK => DecodeMode::TopK { k: self.top_k },
            DecodeKind::TopP => DecodeMode::TopP { p: self.top_p },
        };
        GenerationConfig {
            max_new_tokens: self.max_new_tokens,
            mode,
            seed: Some(self.seed),
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            segmentation: self.segmentation(),
            selection: SelectionConfig { k: self.k },
            scheduler: SchedulerConfig {
                max_parallel: self.max_parallel,
                token_budget: self.token_budget,
            },
            generation: self.generation(),
        }
    }

    pub fn harness(&self) -> HarnessConfig {
        HarnessConfig {
            pipeline: self.pipeline(),
            sink_len: self.sink_len,
            recent_len: self.recent_len,
        }
    }

    pub fn probe(&self) -> NeedleProbe {
        NeedleProbe::from_text(&self.needle, &self.question, &self.answer)
    }

    /// Checks the pipeline settings and referenced files.
    pub fn validate(&self) -> Result<(), CliError> {
        self.pipeline().validate()?;
        if let Some(path) = &self.ngram_corpus {
            if !path.is_file() {
                return Err(CliError::Config(format!(
                    "ngram_corpus {} does not exist",
                    path.display()
                )));
            }
        }
        if self.backend == BackendKind::Remote && self.url.is_none() {
            return Err(CliError::Config("the remote backend needs --url".into()));
        }
        Ok(())
    }

    pub fn build_backend(&self) -> Result<Box<dyn ModelBackend>, CliError> {
        self.validate()?;
        match self.backend {
            BackendKind::Oracle => {
                let oracle = OracleBackend::new(
                    self.probe().needle,
                    self.probe().answer,
                    BYTE_VOCAB,
                    self.context_window,
                )?;
                Ok(Box::new(oracle))
            }
            BackendKind::Ngram => {
                let text = match &self.ngram_corpus {
                    Some(path) => std::fs::read_to_string(path).map_err(|e| {
                        CliError::Config(format!(
                            "cannot read ngram_corpus {}: {e}",
                            path.display()
                        ))
                    })?,
                    None => synthetic_markov_corpus(self.seed, 100_000),
                };
                let model = NgramBackend::from_text(&text, self.ngram_order, self.ngram_alpha)
                    .map_err(|e| CliError::Config(e.to_string()))?
                    .with_context_window(self.context_window);
                Ok(Box::new(model))
            }
            BackendKind::Remote => {
                let url = self.url.as_deref().unwrap_or_default();
                let retry = RetryPolicy {
                    max_retries: self.max_retries,
                    ..RetryPolicy::default()
                };
                let remote =
                    RemoteBackend::connect(url, Duration::from_millis(self.timeout_ms), retry)?
                        .with_pool_size(self.max_parallel);
                let server_window = remote.info().context_window;
                if self.context_window > server_window {
                    return Err(CliError::Config(format!(
                        "context_window {} exceeds the server's window of {server_window}",
                        self.context_window
                    )));
                }
                Ok(Box::new(remote))
            }
        }
    }
}
