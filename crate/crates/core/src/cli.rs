//! Command-line front end.
//!
//! Every subcommand returns a JSON summary that the binary prints on
//! standard output; progress and warnings go to standard error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use thiserror::Error;

use crate::fsutil::{to_jsonl, write_atomic};
use crate::ingest::{load_dataset, Dataset, IngestError, ParsePolicy};
use crate::labeler::{document_label, LabelError, LabelerConfig};
use crate::metrics::{
    evaluate_corpus, line_count_distribution, split_output_lines, Averaging, EvalOptions,
    MetricsError,
};
use crate::report::{
    histogram_csv, histogram_svg, pair_by_key, read_keyed, report_csv, KeyedLines, KeyedText,
    ReportError,
};
use crate::sampler::{
    build_curriculum, read_shard, CurriculumSpec, SampleMode, SamplerError, MANIFEST_FILE,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_METRIC: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Metrics(_) | CliError::Report(ReportError::KeyMismatch { .. }) => EXIT_METRIC,
            _ => EXIT_IO,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Ingest(IngestError::MalformedLine { .. }) => "MalformedLine",
            CliError::Ingest(IngestError::MissingFile(_)) => "MissingFile",
            CliError::Ingest(IngestError::UnreadableImage { .. }) => "UnreadableImage",
            CliError::Ingest(IngestError::EmptyAnnotation(_)) => "EmptyAnnotation",
            CliError::Ingest(IngestError::EmptyDataset(_)) => "EmptyDataset",
            CliError::Label(LabelError::SeparatorCollision { .. })
            | CliError::Sampler(SamplerError::Label(LabelError::SeparatorCollision { .. })) => {
                "SeparatorCollision"
            }
            CliError::Label(_) | CliError::Sampler(SamplerError::Label(_)) => "InvalidConfig",
            CliError::Sampler(SamplerError::PageTooShort { .. }) => "PageTooShort",
            CliError::Sampler(SamplerError::UnreadableImage { .. }) => "UnreadableImage",
            CliError::Sampler(SamplerError::Io { .. })
            | CliError::Ingest(IngestError::Io { .. }) => "IoError",
            CliError::Sampler(_) => "InvalidCurriculum",
            CliError::Metrics(MetricsError::EmptyCorpus) => "EmptyCorpus",
            CliError::Metrics(MetricsError::EmptyReference { .. }) => "EmptyReference",
            CliError::Report(ReportError::KeyMismatch { .. }) => "KeyMismatch",
            CliError::Report(ReportError::DuplicateKey { .. }) => "DuplicateKey",
            CliError::Report(ReportError::Parse { .. }) => "ParseError",
            CliError::Report(ReportError::Io { .. }) | CliError::Io { .. } => "IoError",
            CliError::InvalidArgument(_) => "InvalidArgument",
        }
    }

    /// Machine-readable error document.
    pub fn to_json(&self) -> Value {
        let mut err = json!({
            "kind": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        if let CliError::Report(ReportError::KeyMismatch {
            missing_in_hyp,
            missing_in_ref,
        }) = self
        {
            err["missing_in_hyp"] = json!(missing_in_hyp);
            err["missing_in_ref"] = json!(missing_in_ref);
        }
        json!({ "error": err })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "chunkforge",
    version,
    about = "Chunk-level receipt OCR dataset builder and scorer"
)]
pub struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample chunks, build their labels and write a curriculum manifest.
    BuildDataset(BuildArgs),
    /// Histogram of text lines per page.
    Analyze(AnalyzeArgs),
    /// Write whole-page (or shard chunk) reference labels as {key, text} JSONL.
    Reference(ReferenceArgs),
    /// Score hypotheses against references.
    Evaluate(EvaluateArgs),
    /// Split generated text into lines on the separator.
    Postprocess(PostprocessArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DatasetArgs {
    /// Dataset root holding image/annotation pairs.
    #[arg(long)]
    pub root: PathBuf,
    /// Optional split subdirectory under the root (e.g. train, test).
    #[arg(long)]
    pub split: Option<String>,
    /// Abort on malformed annotation lines instead of skipping them.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Args)]
pub struct LabelArgs {
    /// Minimum fraction of a box inside a chunk for it to be labeled.
    #[arg(long, default_value_t = crate::labeler::DEFAULT_THETA)]
    pub theta: f64,
    /// Minimum vertical overlap for two boxes to share a text line.
    #[arg(long, default_value_t = crate::labeler::DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long, default_value_t = crate::labeler::DEFAULT_SEPARATOR)]
    pub separator: char,
    /// String placed between boxes of one text line.
    #[arg(long, default_value = crate::labeler::DEFAULT_JOINER)]
    pub joiner: String,
}

impl LabelArgs {
    fn config(&self) -> Result<LabelerConfig, CliError> {
        let cfg = LabelerConfig {
            theta: self.theta,
            delta: self.delta,
            separator: self.separator,
            joiner: self.joiner.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Random,
    Tiled,
}

#[derive(Debug, Clone, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[command(flatten)]
    pub label: LabelArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated chunk counts per stage, strictly decreasing.
    #[arg(long, value_delimiter = ',', default_values_t = crate::sampler::DEFAULT_STAGES)]
    pub stages: Vec<u32>,
    #[arg(long, default_value_t = crate::sampler::DEFAULT_SAMPLES_PER_IMAGE)]
    pub samples_per_image: u32,
    #[arg(long, default_value_t = 1)]
    pub epochs: u32,
    #[arg(long, env = "CHUNKFORGE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// random: training chunks; tiled: sequential evaluation chunks.
    #[arg(long, value_enum, default_value_t = ModeArg::Random)]
    pub mode: ModeArg,
    /// Also write each chunk as a PNG crop.
    #[arg(long)]
    pub materialize_crops: bool,
    /// Redraw chunks that contain no labeled box.
    #[arg(long)]
    pub resample_empty: bool,
    /// Keep all N identical full-page samples for L = 1.
    #[arg(long)]
    pub no_dedup_full_page: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[command(flatten)]
    pub label: LabelArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write an SVG bar chart.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReferenceArgs {
    #[command(flatten)]
    pub dataset: DatasetArgs,
    #[command(flatten)]
    pub label: LabelArgs,
    /// Emit chunk references from this shard instead of whole pages.
    #[arg(long)]
    pub shard: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub hyp: PathBuf,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-pair CSV export.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value_t = crate::labeler::DEFAULT_SEPARATOR)]
    pub separator: char,
    /// Replace separators with spaces before computing CER.
    #[arg(long, num_args = 0..=1, default_value_t = true, default_missing_value = "true", action = clap::ArgAction::Set)]
    pub strip_separator: bool,
    #[arg(long, value_enum, default_value_t = AverageArg::Micro)]
    pub average: AverageArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AverageArg {
    Micro,
    Macro,
}

#[derive(Debug, Clone, Args)]
pub struct PostprocessArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = crate::labeler::DEFAULT_SEPARATOR)]
    pub separator: char,
}

fn load(args: &DatasetArgs) -> Result<Dataset, CliError> {
    let policy = if args.strict {
        ParsePolicy::Strict
    } else {
        ParsePolicy::SkipWithWarning
    };
    let ds = load_dataset(&args.root, args.split.as_deref(), policy)?;
    for w in &ds.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("loaded {} pages from {}", ds.pages.len(), ds.root.display());
    Ok(ds)
}

pub fn cmd_build_dataset(args: &BuildArgs) -> Result<Value, CliError> {
    let config = args.label.config()?;
    let spec = CurriculumSpec {
        stages: args.stages.clone(),
        samples_per_image: args.samples_per_image,
        mode: match args.mode {
            ModeArg::Random => SampleMode::Random,
            ModeArg::Tiled => SampleMode::Tiled,
        },
        epochs: args.epochs,
        global_seed: args.seed,
        materialize_crops: args.materialize_crops,
        resample_empty: args.resample_empty,
        dedup_full_page: !args.no_dedup_full_page,
    };
    spec.validate()?;
    let ds = load(&args.dataset)?;
    let root = args.dataset.root.to_string_lossy().into_owned();
    let manifest = build_curriculum(&ds.pages, &root, &spec, &config, &args.out)?;
    for s in &manifest.stages {
        eprintln!("stage L={}: {} records", s.chunks, s.records);
    }
    Ok(json!({
        "pages": ds.pages.len(),
        "warnings": ds.warnings.len(),
        "manifest": args.out.join(MANIFEST_FILE),
        "stages": manifest.stages.iter().map(|s| json!({
            "L": s.chunks,
            "N": s.samples_per_image,
            "mode": s.mode,
            "epochs": s.epochs,
            "records": s.records,
            "shard_path": s.shard_path,
        })).collect::<Vec<_>>(),
    }))
}

pub const HISTOGRAM_CSV: &str = "line_counts.csv";
pub const HISTOGRAM_SVG: &str = "line_counts.svg";

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<Value, CliError> {
    let config = args.label.config()?;
    let ds = load(&args.dataset)?;
    let hist = line_count_distribution(&ds.pages, &config)?;
    let csv_path = args.out.join(HISTOGRAM_CSV);
    write_atomic(&csv_path, histogram_csv(&hist).as_bytes()).map_err(io_err(&csv_path))?;
    let mut summary = json!({
        "pages": hist.total_pages(),
        "median": hist.median,
        "histogram": hist.counts.iter().map(|(k, v)| (k.to_string(), json!(v))).collect::<serde_json::Map<_, _>>(),
        "csv": csv_path,
    });
    if args.svg {
        let svg_path = args.out.join(HISTOGRAM_SVG);
        write_atomic(&svg_path, histogram_svg(&hist).as_bytes()).map_err(io_err(&svg_path))?;
        summary["svg"] = json!(svg_path);
    }
    eprintln!("median text lines per page: {}", hist.median);
    Ok(summary)
}

/// Key of a shard record in chunk-level reference files.
pub fn chunk_key(page_id: &str, stage_l: u32, sample_index: u32) -> String {
    format!("{page_id}_L{stage_l}_k{sample_index}")
}

pub fn cmd_reference(args: &ReferenceArgs) -> Result<Value, CliError> {
    let records: Vec<KeyedText> = match &args.shard {
        Some(shard) => read_shard(shard)?
            .into_iter()
            .map(|r| KeyedText {
                key: chunk_key(&r.page_id, r.stage_l, r.sample_index),
                text: r.label,
            })
            .collect(),
        None => {
            let config = args.label.config()?;
            let ds = load(&args.dataset)?;
            config.check_separator(&ds.pages)?;
            ds.pages
                .iter()
                .map(|p| KeyedText {
                    key: p.page_id.clone(),
                    text: document_label(p, &config).joined,
                })
                .collect()
        }
    };
    write_jsonl(&args.out, &records)?;
    Ok(json!({ "records": records.len(), "out": args.out }))
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let bytes = to_jsonl(items).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    write_atomic(path, &bytes).map_err(io_err(path))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<Value, CliError> {
    let refs = read_keyed(&args.reference)?;
    let hyps = read_keyed(&args.hyp)?;
    let pairs = pair_by_key(&refs, &hyps)?;
    let opts = EvalOptions {
        separator: args.separator,
        strip_separator: args.strip_separator,
        averaging: match args.average {
            AverageArg::Micro => Averaging::Micro,
            AverageArg::Macro => Averaging::Macro,
        },
    };
    let report = evaluate_corpus(&pairs, &opts)?;
    let mut bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
    bytes.push(b'\n');
    write_atomic(&args.out, &bytes).map_err(io_err(&args.out))?;
    if let Some(csv) = &args.csv {
        write_atomic(csv, report_csv(&report).as_bytes()).map_err(io_err(csv))?;
    }
    let c = &report.corpus;
    eprintln!(
        "P {:.2}  R {:.2}  F1 {:.2}  CER {}",
        c.precision * 100.0,
        c.recall * 100.0,
        c.f1 * 100.0,
        c.cer
            .map(|x| format!("{:.2}", x * 100.0))
            .unwrap_or_else(|| "n/a".into())
    );
    Ok(json!({ "corpus": c, "report": args.out }))
}

pub fn cmd_postprocess(args: &PostprocessArgs) -> Result<Value, CliError> {
    let hyps = read_keyed(&args.hyp)?;
    let out: Vec<KeyedLines> = hyps
        .into_iter()
        .map(|h| KeyedLines {
            lines: split_output_lines(&h.text, args.separator),
            key: h.key,
        })
        .collect();
    write_jsonl(&args.out, &out)?;
    Ok(json!({ "records": out.len(), "out": args.out }))
}

pub fn run(cli: &Cli) -> Result<Value, CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::InvalidArgument(
                "--jobs must be at least 1".into(),
            ));
        }
        // fails only when a pool already exists, which is fine to ignore
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    match &cli.command {
        Command::BuildDataset(a) => cmd_build_dataset(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Reference(a) => cmd_reference(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Postprocess(a) => cmd_postprocess(a),
    }
}
