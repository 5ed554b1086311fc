use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use xl3m::backend::{Instrumented, ModelBackend};
use xl3m::eval::correlation::{entropy_loss_correlation, self_generate};
use xl3m::eval::needle::{generate_haystack, run_needle_grid, GridConfig, NeedleTaskSpec};
use xl3m::eval::qa::{parse_qa_jsonl, score_qa, QaMetric};
use xl3m::eval::timing::{measure_timing, timing_table, TimingReport, DEFAULT_DECODE_LEN};
use xl3m::eval::Method;
use xl3m::pipeline::segment_content;
use xl3m::selection::run_pipeline;
use xl3m::tokens::parse_token_file;
use xl3m::{TokenId, TokenSequence};

use crate::{BackendKind, CliError, RunConfig};

#[derive(Debug, Clone, Default, Args)]
pub struct InputArgs {
    /// Input text.
    #[arg(long, conflicts_with_all = ["input_file", "tokens"])]
    pub input: Option<String>,
    /// Read the input text from a file.
    #[arg(long, conflicts_with = "tokens")]
    pub input_file: Option<PathBuf>,
    /// Read token ids (whitespace or comma separated, `#` comments) from a file.
    #[arg(long)]
    pub tokens: Option<PathBuf>,
}

impl InputArgs {
    fn is_empty(&self) -> bool {
        self.input.is_none() && self.input_file.is_none() && self.tokens.is_none()
    }

    fn load(&self, backend: &dyn ModelBackend) -> Result<Option<TokenSequence>, CliError> {
        let seq = if let Some(text) = &self.input {
            backend.tokenize(text)?
        } else if let Some(path) = &self.input_file {
            backend.tokenize(&read_input(path)?)?
        } else if let Some(path) = &self.tokens {
            parse_token_file(&read_input(path)?)?
        } else {
            return Ok(None);
        };
        seq.check_vocab(backend.info().vocab_size)?;
        Ok(Some(seq))
    }
}

fn read_input(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Writes `text` to `--out` when set, otherwise to stdout.
fn emit(cfg: &RunConfig, stdout: &mut dyn Write, text: &str) -> Result<(), CliError> {
    match &cfg.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?,
        None => stdout.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn require_byte_level(cfg: &RunConfig, what: &str) -> Result<(), CliError> {
    if cfg.backend == BackendKind::Remote {
        return Err(CliError::Config(format!(
            "{what} builds byte-level inputs and needs the oracle or ngram backend"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["input", "input_file", "tokens", "qa"]))]
pub struct RunArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Print per-segment entropies and the selected segments.
    #[arg(long)]
    pub explain: bool,
    /// Score a QA file (JSONL records with id, context, question, answers).
    #[arg(long, conflicts_with_all = ["input", "input_file", "tokens"])]
    pub qa: Option<PathBuf>,
    #[arg(long, default_value = "token_f1", value_parser = parse_metric)]
    pub metric: QaMetric,
}

fn parse_metric(s: &str) -> Result<QaMetric, String> {
    s.parse().map_err(|e: xl3m::Error| e.to_string())
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: xl3m::Error| e.to_string())
}

pub fn cmd_run(cfg: &RunConfig, args: &RunArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let backend = cfg.build_backend()?;
    let pipeline = cfg.pipeline();

    if let Some(path) = &args.qa {
        let file =
            File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let records = parse_qa_jsonl(BufReader::new(file))?;
        let mut report = String::from("id\tscore\tprediction\n");
        let mut total = 0.0;
        for r in &records {
            let seq = backend.tokenize(&format!("{}\n{}", r.context, r.question))?;
            let run = run_pipeline(&*backend, &seq, &pipeline)?;
            let prediction = backend.detokenize(&run.generated)?;
            let score = score_qa(&prediction, &r.answers, args.metric);
            total += score;
            let _ = writeln!(report, "{}\t{score:.4}\t{:?}", r.id, prediction.trim());
        }
        let mean = if records.is_empty() {
            0.0
        } else {
            total / records.len() as f64
        };
        let _ = writeln!(
            report,
            "# records={} mean_{}={mean:.4}",
            records.len(),
            args.metric
        );
        return emit(cfg, stdout, &report);
    }

    let seq = args
        .input
        .load(&*backend)?
        .ok_or_else(|| CliError::Input("no input given".into()))?;
    let run = run_pipeline(&*backend, &seq, &pipeline)?;
    let mut out = String::new();
    if args.explain {
        let d = &run.decomposition;
        let key = &run.key_context;
        if d.bypass {
            let _ = writeln!(
                out,
                "input of {} tokens fits the window; no segmentation",
                seq.len()
            );
        } else {
            let _ = writeln!(
                out,
                "{} tokens: header {:?}, content {:?}, task {:?}, {} segments",
                seq.len(),
                d.header,
                d.content,
                d.task,
                d.num_segments()
            );
            let _ = writeln!(
                out,
                "{:>6} {:>8} {:>8} {:>12}  selected",
                "index", "start", "end", "entropy"
            );
            for s in &run.scores {
                let seg = d.segments[s.segment_index];
                let mark = if key.selected_indices.contains(&s.segment_index) {
                    "*"
                } else {
                    ""
                };
                let _ = writeln!(
                    out,
                    "{:>6} {:>8} {:>8} {:>12.6}  {mark}",
                    s.segment_index, seg.start, seg.end, s.entropy
                );
            }
        }
        let _ = writeln!(
            out,
            "selected {:?}, key context {} / {} tokens",
            key.selected_indices, key.budget_used, cfg.context_window
        );
    }
    let _ = writeln!(out, "{}", backend.detokenize(&run.generated)?);
    emit(cfg, stdout, &out)
}

#[derive(Debug, Clone, Args)]
pub struct NeedleArgs {
    /// Haystack lengths in tokens.
    #[arg(long, value_delimiter = ',', default_values_t = xl3m::eval::needle::DEFAULT_LENGTHS)]
    pub lengths: Vec<usize>,
    /// Number of depth bins.
    #[arg(long, default_value_t = 10)]
    pub depths: usize,
    /// Runs per cell.
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long, default_value = "xl3m", value_parser = parse_method)]
    pub method: Method,
    /// Worker threads for independent runs (default: available cores).
    #[arg(long)]
    pub parallelism: Option<usize>,
}

pub fn cmd_needle(
    cfg: &RunConfig,
    args: &NeedleArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    require_byte_level(cfg, "the needle grid")?;
    let backend = cfg.build_backend()?;
    let defaults = GridConfig::default();
    let grid = GridConfig {
        lengths: args.lengths.clone(),
        depth_bins: args.depths,
        runs_per_cell: args.runs,
        seed: cfg.seed,
        probe: cfg.probe(),
        parallelism: args.parallelism.unwrap_or(defaults.parallelism),
    };
    let result = run_needle_grid(&*backend, args.method, &cfg.harness(), &grid)?;
    let mut heatmap = result.heatmap();
    if args.method == Method::Xl3m {
        let _ = writeln!(
            heatmap,
            "needle straddled a segment boundary in {} runs",
            result.straddle_count()
        );
    }
    match &cfg.out {
        Some(_) => {
            emit(cfg, stdout, &result.to_csv())?;
            stdout.write_all(heatmap.as_bytes())?;
        }
        None => {
            stdout.write_all(result.to_csv().as_bytes())?;
            stderr.write_all(heatmap.as_bytes())?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Haystack length used when no input is given.
    #[arg(long, default_value_t = 16_384)]
    pub length: usize,
    #[arg(long, default_value_t = DEFAULT_DECODE_LEN)]
    pub decode_len: usize,
    /// Methods to time (repeatable; default: all).
    #[arg(long = "method", value_parser = parse_method)]
    pub methods: Vec<Method>,
    /// Latency injected into every scoring call, in milliseconds.
    #[arg(long, default_value_t = 0.0)]
    pub score_latency_ms: f64,
    /// Latency injected before every generated token, in milliseconds.
    #[arg(long, default_value_t = 0.0)]
    pub token_latency_ms: f64,
}

fn latency(ms: f64) -> Result<Duration, CliError> {
    Duration::try_from_secs_f64(ms / 1e3)
        .map_err(|_| CliError::Config(format!("invalid latency {ms} ms")))
}

pub fn cmd_bench(
    cfg: &RunConfig,
    args: &BenchArgs,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let backend = Instrumented::new(cfg.build_backend()?)
        .with_score_latency(latency(args.score_latency_ms)?)
        .with_token_latency(latency(args.token_latency_ms)?);
    let seq = match args.input.load(&backend)? {
        Some(seq) => seq,
        None => {
            require_byte_level(cfg, "bench without --input")?;
            generate_haystack(&NeedleTaskSpec {
                haystack_len: args.length,
                depth_fraction: 0.5,
                probe: cfg.probe(),
                seed: cfg.seed,
            })?
            .tokens
        }
    };
    let methods = if args.methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        args.methods.clone()
    };
    let harness = cfg.harness();
    let reports = methods
        .iter()
        .map(|&m| measure_timing(&backend, m, &seq, &harness, args.decode_len))
        .collect::<Result<Vec<TimingReport>, _>>()?;
    let table = timing_table(&reports);
    if cfg.out.is_some() {
        let mut csv = String::from("method,total_s,prefill_s,decode_s,decoded_tokens\n");
        for r in &reports {
            let _ = writeln!(
                csv,
                "{},{:.6},{:.6},{:.6},{}",
                r.method, r.total_s, r.prefill_s, r.decode_s, r.decoded_tokens
            );
        }
        emit(cfg, stdout, &csv)?;
    }
    stdout.write_all(table.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct DiagArgs {
    /// Text to evaluate; without it the backend generates its own text.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Number of scored positions.
    #[arg(long, default_value_t = 10_000)]
    pub positions: usize,
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
    #[arg(long, default_value_t = xl3m::eval::correlation::DEFAULT_BINS)]
    pub bins: usize,
}

pub fn cmd_diag(cfg: &RunConfig, args: &DiagArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if args.positions == 0 || args.stride == 0 || args.bins == 0 {
        return Err(CliError::Config(
            "positions, stride and bins must be positive".into(),
        ));
    }
    let backend = cfg.build_backend()?;
    let wanted = (args.positions - 1) * args.stride + 2;
    let tokens: Vec<TokenId> = match &args.corpus {
        Some(path) => {
            let seq = backend.tokenize(&read_input(path)?)?;
            seq.iter().copied().take(wanted).collect()
        }
        None => {
            let prompt = backend.tokenize("a")?;
            self_generate(&*backend, &prompt, wanted - prompt.len(), cfg.seed)?.to_vec()
        }
    };
    let report = entropy_loss_correlation(&*backend, &tokens, args.stride)?.rebin(args.bins);
    emit(cfg, stdout, &report.to_csv())?;
    if cfg.out.is_some() {
        writeln!(stdout, "{}", report.summary())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Content length to segment when no input is given.
    #[arg(long)]
    pub length: Option<usize>,
}

/// Segments the whole input as content.
pub fn cmd_segment(
    cfg: &RunConfig,
    args: &SegmentArgs,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let seg_cfg = cfg.segmentation();
    seg_cfg.validate()?;
    let len = if args.input.is_empty() {
        args.length.ok_or_else(|| {
            CliError::Input("give --input, --input-file, --tokens or --length".into())
        })?
    } else {
        let backend = cfg.build_backend()?;
        args.input.load(&*backend)?.map_or(0, |s| s.len())
    };
    let content: Vec<TokenId> = vec![0; len];
    let segments = segment_content(&content, &seg_cfg)?;
    let mut csv = String::from("index,start,end,overlap_prev\n");
    for (i, s) in segments.iter().enumerate() {
        let overlap = if i == 0 {
            String::new()
        } else {
            segments[i - 1].end.saturating_sub(s.start).to_string()
        };
        let _ = writeln!(csv, "{},{},{},{overlap}", s.index, s.start, s.end);
    }
    emit(cfg, stdout, &csv)
}
