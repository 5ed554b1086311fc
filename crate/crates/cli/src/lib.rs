//! Command-line front end for the `xl3m` library.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{BackendKind, DecodeKind, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("input error: {0}")]
    Input(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Backend(_) => 2,
            CliError::Input(_) => 3,
        }
    }
}

impl From<xl3m::Error> for CliError {
    fn from(e: xl3m::Error) -> Self {
        if e.is_config() || matches!(e, xl3m::Error::NeedleTooLong { .. }) {
            CliError::Config(e.to_string())
        } else if e.is_backend() {
            CliError::Backend(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "xl3m",
    version,
    about = "Long-context inference by entropy-ranked segment selection"
)]
pub struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for haystacks, sampling and synthetic corpora.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    /// Model server base URL for the remote backend.
    #[arg(long, global = true)]
    pub url: Option<String>,
    /// Write the command's main output (CSV or text) here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Per-field overrides of the config file.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub window: Option<usize>,
    #[arg(long, global = true)]
    pub overlap: Option<usize>,
    #[arg(long, global = true)]
    pub task_len: Option<usize>,
    #[arg(long, global = true)]
    pub header_len: Option<usize>,
    #[arg(long, global = true)]
    pub context_window: Option<usize>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub max_parallel: Option<usize>,
    #[arg(long, global = true)]
    pub token_budget: Option<usize>,
    #[arg(long, global = true)]
    pub max_new_tokens: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub decode: Option<DecodeKind>,
    #[arg(long, global = true)]
    pub ngram_corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub ngram_order: Option<usize>,
    #[arg(long, global = true)]
    pub needle: Option<String>,
    #[arg(long, global = true)]
    pub answer: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pipeline on one input and print the generated text.
    Run(commands::RunArgs),
    /// Needle-in-a-haystack recall grid.
    Needle(commands::NeedleArgs),
    /// Prefill/decode timing per method.
    Bench(commands::BenchArgs),
    /// Entropy versus loss of the backend's own predictions.
    Diag(commands::DiagArgs),
    /// Show how an input is cut into segments.
    Segment(commands::SegmentArgs),
    /// Print the effective config as JSON.
    DumpConfig,
}

impl Cli {
    /// The config file (if any) with command-line overrides applied.
    pub fn effective_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($src:expr => $dst:ident),* $(,)?) => {
                $(if let Some(v) = $src.clone() { cfg.$dst = v; })*
            };
        }
        set!(
            self.seed => seed,
            self.backend => backend,
            self.overrides.window => window,
            self.overrides.overlap => overlap,
            self.overrides.task_len => task_len,
            self.overrides.header_len => header_len,
            self.overrides.context_window => context_window,
            self.overrides.k => k,
            self.overrides.max_parallel => max_parallel,
            self.overrides.max_new_tokens => max_new_tokens,
            self.overrides.decode => decode,
            self.overrides.ngram_order => ngram_order,
            self.overrides.needle => needle,
            self.overrides.answer => answer,
        );
        if self.url.is_some() {
            cfg.url = self.url.clone();
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        if self.overrides.token_budget.is_some() {
            cfg.token_budget = self.overrides.token_budget;
        }
        if self.overrides.ngram_corpus.is_some() {
            cfg.ngram_corpus = self.overrides.ngram_corpus.clone();
        }
        Ok(cfg)
    }
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are reported as errors by clap but are not failures.
            if e.use_stderr() {
                let _ = write!(stderr, "{e}");
                return 1;
            }
            let _ = write!(stdout, "{e}");
            return 0;
        }
    };
    match dispatch(&cli, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let cfg = cli.effective_config()?;
    match &cli.command {
        Command::Run(args) => commands::cmd_run(&cfg, args, stdout),
        Command::Needle(args) => commands::cmd_needle(&cfg, args, stdout, stderr),
        Command::Bench(args) => commands::cmd_bench(&cfg, args, stdout),
        Command::Diag(args) => commands::cmd_diag(&cfg, args, stdout),
        Command::Segment(args) => commands::cmd_segment(&cfg, args, stdout),
        Command::DumpConfig => {
            cfg.validate()?;
            writeln!(stdout, "{}", cfg.to_json())?;
            Ok(())
        }
    }
}
