use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ciem_core::corpus::{CaptionMode, Split};

#[derive(Debug, Parser)]
#[command(name = "ciem", version, about = "Contrastive yes/no QA generation, review and VLM evaluation")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, env = "CIEM_CONFIG")]
    pub config: Option<PathBuf>,

    /// Directory holding the response cache and review state.
    #[arg(long, global = true)]
    pub state_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a COCO-caption JSON file into a canonical corpus.jsonl.
    Ingest(IngestArgs),
    /// Generate factual and/or contrastive QA pairs for a corpus.
    Generate(GenerateArgs),
    /// Blind review of generated pairs.
    #[command(subcommand)]
    Review(ReviewCommand),
    /// Write the pairs a majority of moderators judged correct.
    Adjudicate(AdjudicateArgs),
    /// Ask a vision-language model every question of a QA file.
    Evaluate(EvaluateArgs),
    /// Score model answers against gold answers.
    Report(ReportArgs),
    /// Contrastive instruction-tuning data.
    #[command(subcommand)]
    Cit(CitCommand),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub captions: PathBuf,
    #[arg(long, value_parser = parse_split)]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Http,
    Stub,
}

impl BackendKind {
    pub fn id(self) -> &'static str {
        match self {
            BackendKind::Http => "http",
            BackendKind::Stub => "stub",
        }
    }
}

/// Flags shared by the stages that call a text-generation backend.
#[derive(Debug, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    pub backend: BackendKind,
    /// Chat-completion URL for the http backend.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_concurrency: Option<usize>,
    #[arg(long)]
    pub requests_per_minute: Option<f64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    /// Response cache file (default: <state-dir>/cache.jsonl).
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Lexicon for the stub backend (default: bundled).
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, value_parser = parse_caption_mode)]
    pub caption_mode: Option<CaptionMode>,
    /// Per-call delay of the stub backend, in milliseconds.
    #[arg(long, hide = true)]
    pub stub_delay_ms: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated subset of factual,contrastive.
    #[arg(long, value_delimiter = ',', required = true)]
    pub kinds: Vec<GenKind>,
    #[arg(long)]
    pub out: PathBuf,
    /// Quarantine file (default: <out stem>.quarantine.jsonl).
    #[arg(long)]
    pub quarantine: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GenKind {
    Factual,
    Contrastive,
}

#[derive(Debug, Subcommand)]
pub enum ReviewCommand {
    /// Serve the review HTTP API.
    Serve(ServeArgs),
    /// Append verdicts from a JSONL file to the campaign.
    Import(ImportArgs),
    /// Write the error-rate table; requires every pair adjudicated.
    Report(ReviewReportArgs),
}

#[derive(Debug, Args)]
pub struct CampaignArgs {
    /// QA file under review (stored in the campaign on first use).
    #[arg(long)]
    pub qa: Option<PathBuf>,
    /// Exactly three moderator ids, in round order.
    #[arg(long, value_delimiter = ',')]
    pub moderators: Option<Vec<String>>,
    /// Corpus supplying file names and captions for review items.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub campaign: CampaignArgs,
    #[arg(long)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[arg(long)]
    pub verdicts: PathBuf,
    #[command(flatten)]
    pub campaign: CampaignArgs,
}

#[derive(Debug, Args)]
pub struct ReviewReportArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AdjudicateArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub qa: PathBuf,
    /// Model URL, or stub:always-yes / stub:always-no / stub:oracle.
    #[arg(long)]
    pub endpoint: String,
    #[arg(long)]
    pub images_root: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus mapping image ids to file names (default: the review campaign's).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub max_concurrency: Option<usize>,
    #[arg(long)]
    pub requests_per_minute: Option<f64>,
    /// Percent of transport failures tolerated before the run fails.
    #[arg(long)]
    pub max_failure_pct: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub qa: PathBuf,
    #[arg(long)]
    pub answers: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum CitCommand {
    /// Generate CoT instruction samples from the training split.
    Generate(CitGenerateArgs),
    /// Export samples as conversations JSON or QA JSONL.
    Export(CitExportArgs),
}

#[derive(Debug, Args)]
pub struct CitGenerateArgs {
    /// corpus.jsonl, or a COCO-caption JSON file.
    #[arg(long)]
    pub train_corpus: PathBuf,
    #[arg(long)]
    pub eval_corpus: PathBuf,
    /// Replace every answer by a bare "Yes."/"No.".
    #[arg(long)]
    pub no_cot: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct CitExportArgs {
    #[arg(long)]
    pub cit: PathBuf,
    #[arg(long)]
    pub format: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse::<Split>().map_err(|e| e.to_string())
}

fn parse_caption_mode(s: &str) -> Result<CaptionMode, String> {
    s.parse()
}
