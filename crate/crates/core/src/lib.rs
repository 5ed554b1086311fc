//! Long-context inference for fixed-window language models, without
//! fine-tuning.
//!
//! A long input is split into a trailing task suffix and the content before
//! it. The content is cut into overlapping fixed-size segments, and each
//! segment is scored by the entropy of the model's next-token distribution
//! after `header ++ segment ++ task`. The `k` lowest-entropy segments are
//! spliced back together in their original order, between the header and the
//! task, into a key context that fits the model window, and the model
//! generates from that.
//!
//! ```
//! use xl3m::backend::{GenerationConfig, ModelBackend, OracleBackend};
//! use xl3m::eval::needle::{generate_haystack, NeedleProbe, NeedleTaskSpec};
//! use xl3m::selection::{run_pipeline, PipelineConfig};
//!
//! let probe = NeedleProbe::from_text("The code is 7731.", " What is the code?", "7731");
//! let hay = generate_haystack(&NeedleTaskSpec {
//!     haystack_len: 8192,
//!     depth_fraction: 0.4,
//!     probe: probe.clone(),
//!     seed: 1,
//! })
//! .unwrap();
//! let oracle = OracleBackend::new(probe.needle, probe.answer, 256, 2048).unwrap();
//! let run = run_pipeline(&oracle, &hay.tokens, &PipelineConfig::default()).unwrap();
//! assert_eq!(run.key_context.budget_used, 1792);
//! assert!(oracle.detokenize(&run.generated).unwrap().starts_with("7731"));
//! ```

pub mod backend;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod scoring;
pub mod selection;
pub mod tokens;

pub use error::{Error, Result};
pub use tokens::{TokenId, TokenSequence};
