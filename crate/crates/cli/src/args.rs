use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use cog_core::decoder::DecodeMode;

#[derive(Debug, Parser)]
#[command(name = "cog", version, about = "Generate text by copying phrases from an indexed corpus")]
pub struct Cli {
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize a JSONL corpus ({"id", "text"} per line).
    Ingest(IngestArgs),
    /// Split every document into copied phrases and single tokens.
    Segment(SegmentArgs),
    /// Encode a corpus into a phrase index file.
    BuildIndex(BuildIndexArgs),
    /// Fit the toy encoder on a segmented corpus.
    TrainToy(TrainArgs),
    /// Continue each line of a prefix file.
    Generate(GenerateArgs),
    /// Repetition and diversity metrics over trace files.
    Eval(EvalArgs),
    /// Time phrase decoding against token-only decoding.
    Bench(BenchArgs),
    /// Run a whole experiment from a JSON config or a preset.
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Toy,
    Sidecar,
}

#[derive(Debug, Clone, Default, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value_t)]
    pub backend: BackendKind,
    /// Base URL of the encoder service, e.g. http://127.0.0.1:8080.
    #[arg(long)]
    pub sidecar_url: Option<String>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Tokenize against the frozen vocabulary of an existing corpus file;
    /// unseen words become `<unk>`.
    #[arg(long)]
    pub vocab_from: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncoderInit {
    /// Toy encoder parameters (JSON). Seeded from --seed/--d when absent.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = cog_core::encoder::DEFAULT_DIM)]
    pub d: usize,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Neighbor documents searched for each document's phrases.
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    #[arg(long, default_value_t = 2)]
    pub lmin: usize,
    #[arg(long, default_value_t = 8)]
    pub lmax: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub encoder: EncoderInit,
}

#[derive(Debug, Args)]
pub struct BuildIndexArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub lmax: usize,
    #[command(flatten)]
    pub encoder: EncoderInit,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub segments: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = cog_core::encoder::DEFAULT_DIM)]
    pub d: usize,
    #[arg(long, default_value_t = 1.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 8)]
    pub lmax: usize,
    /// Leave vocabulary tokens out of the phrase-loss candidates.
    #[arg(long)]
    pub no_token_candidates: bool,
    /// Metrics log (JSONL). Defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long, value_enum, default_value = "greedy")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0.95)]
    pub p: f64,
    #[arg(long, default_value_t = 128)]
    pub max_new_tokens: usize,
    /// Seed of the first prefix; prefix `i` uses `seed + i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Re-run document retrieval every n steps.
    #[arg(long, default_value_t = 1)]
    pub coarse_refresh: usize,
    #[arg(long, default_value_t = 1024)]
    pub k_docs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Greedy,
    Nucleus,
}

impl From<ModeArg> for DecodeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Greedy => DecodeMode::Greedy,
            ModeArg::Nucleus => DecodeMode::Nucleus,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// One prefix per non-empty line.
    #[arg(long)]
    pub prefix_file: PathBuf,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Decode with single tokens only.
    #[arg(long)]
    pub tokens_only: bool,
    /// Trace file. With several prefixes, sample `i` goes to
    /// `<stem>.<i>.jsonl` next to it.
    #[arg(long)]
    pub trace_out: PathBuf,
    /// Generated texts as JSONL.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Glob pattern matching trace files; each file is one sample.
    #[arg(long)]
    pub traces: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub prefix_file: PathBuf,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Timed repetitions per mode (at least 20).
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Standard,
    DomainSwap,
    EnlargedIndex,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Print the resolved config and exit.
    #[arg(long)]
    pub print_config: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Comma-separated stage list, e.g. `ingest,segment,train`.
    #[arg(long, value_delimiter = ',')]
    pub stages: Option<Vec<String>>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub sidecar_url: Option<String>,
}
