//! `alliance`: score therapy transcripts with LLM prompts, validate the
//! scores against human ratings and run the composite and path analysis.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use alliance_core::constructs::ConstructId;
use alliance_core::pipeline::SessionRapportRule;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const INPUT: u8 = 2;
    pub const BACKEND: u8 = 3;
    pub const INTERNAL: u8 = 4;
}

#[derive(Debug)]
pub enum CliError {
    Input(anyhow::Error),
    Backend(anyhow::Error),
    Internal(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => exit::INPUT,
            CliError::Backend(_) => exit::BACKEND,
            CliError::Internal(_) => exit::INTERNAL,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Input(_) => "input error",
            CliError::Backend(_) => "backend error",
            CliError::Internal(_) => "internal error",
        }
    }

    fn inner(&self) -> &anyhow::Error {
        match self {
            CliError::Input(e) | CliError::Backend(e) | CliError::Internal(e) => e,
        }
    }
}

pub fn input<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Input(e.into())
}

pub fn internal<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Internal(e.into())
}

#[derive(Debug, Parser)]
#[command(name = "alliance", version, about = "LLM-based scoring and analysis of therapy transcripts")]
struct Cli {
    /// Log filter, e.g. `info` or `alliance_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse and validate a transcript file and print its counts.
    Ingest(IngestArgs),
    /// Generate fixtures: transcripts or simulated human annotations.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Score a corpus with the configured backend.
    Score(ScoreArgs),
    /// Compare model scores with human annotations.
    Validate(ValidateArgs),
    /// Composites, path model, hypotheses and rapport trend.
    Analyze(AnalyzeArgs),
    /// Summarize a score directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    pub corpus: PathBuf,
    /// Also write the counts and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Synthetic transcript JSONL.
    Corpus(SynthCorpusArgs),
    /// Simulated rater annotations for scored targets.
    Annotations(SynthAnnotationsArgs),
}

#[derive(Debug, Args)]
pub struct SynthCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub clients: usize,
    #[arg(long, default_value_t = 3)]
    pub sessions: usize,
    #[arg(long, default_value_t = 40)]
    pub utterances: usize,
    /// Dependence of client disclosure on the preceding therapist turn.
    #[arg(long, default_value_t = 0.0)]
    pub disclosure_effect: f64,
    #[arg(long)]
    pub constant_rapport: bool,
}

#[derive(Debug, Args)]
pub struct SynthAnnotationsArgs {
    /// Score directory written by `score`.
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub raters: usize,
    #[arg(long, default_value_t = 0.5)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Restrict to a stratified sample with this many targets per stratum.
    #[arg(long)]
    pub per_stratum: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub completions: Option<u32>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Comma-separated construct ids.
    #[arg(long, value_delimiter = ',', value_parser = parse_construct)]
    pub constructs: Option<Vec<ConstructId>>,
    /// Response cache file (JSONL).
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_construct(s: &str) -> Result<ConstructId, String> {
    serde_json::from_value(serde_json::Value::String(s.trim().to_string())).map_err(|_| {
        let names: Vec<&str> = ConstructId::ALL.iter().map(|c| c.as_str()).collect();
        format!("unknown construct {s:?}; expected one of {}", names.join(", "))
    })
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RapportRuleArg {
    Mean,
    LastSegment,
    Max,
}

impl From<RapportRuleArg> for SessionRapportRule {
    fn from(r: RapportRuleArg) -> Self {
        match r {
            RapportRuleArg::Mean => SessionRapportRule::Mean,
            RapportRuleArg::LastSegment => SessionRapportRule::LastSegment,
            RapportRuleArg::Max => SessionRapportRule::Max,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub scores: PathBuf,
    /// Defaults to the corpus copy inside the score directory.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub emotion_components: usize,
    #[arg(long, default_value_t = 2)]
    pub empathy_components: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = RapportRuleArg::Mean)]
    pub rapport_rule: RapportRuleArg,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub scores: PathBuf,
    /// Also write the summary and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Synth(SynthCommand::Corpus(a)) => commands::synth_corpus(&a),
        Command::Synth(SynthCommand::Annotations(a)) => commands::synth_annotations(&a),
        Command::Score(a) => commands::score(&a),
        Command::Validate(a) => commands::validate(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Report(a) => commands::report(&a),
    };
    match result {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error ({}): {:#}", e.kind(), e.inner());
            ExitCode::from(e.code())
        }
    }
}
