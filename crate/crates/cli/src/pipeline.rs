//! Experiment bundles: one JSON config drives every stage in order.
//!
//! Artifacts land in `out_dir`:
//!
//! | stage      | writes                                                      |
//! |------------|-------------------------------------------------------------|
//! | `ingest`   | `train.corpus.json`, `index.corpus.json`, `prefixes.jsonl`  |
//! | `segment`  | `segments.jsonl`                                            |
//! | `train`    | `params.json`, `train.log.jsonl`                            |
//! | `index`    | `index.cog`                                                 |
//! | `generate` | `generations.jsonl`, `traces/sample.NNNN.jsonl`             |
//! | `eval`     | `eval.json`                                                 |
//! | `bench`    | `bench.json`                                                |
//!
//! Each stage reads what earlier stages wrote, so a stage list may start
//! anywhere once its inputs exist. `run.json` records the resolved config.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use cog_core::corpus::{detokenize, Corpus, TokenId};
use cog_core::decoder::{DecodeMode, GenerationConfig};
use cog_core::index::{load_index, SearchConfig};
use cog_core::segmenter::{load_segments, save_segments, SegmenterConfig};
use cog_core::training::{LossConfig, TrainConfig};
use cog_core::{Exec, ToyParams};

use crate::args::{BackendArgs, BackendKind, Preset, RunArgs};
use crate::artifacts;
use crate::backend;
use crate::bench::{bench, MIN_RUNS};
use crate::commands::{self, corpus_summary, segments_summary};
use crate::error::{CliError, CliResult};

/// The bundled 200-document demo corpus.
pub const DEMO_CORPUS: &str = include_str!("../data/demo.jsonl");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Segment,
    Train,
    Index,
    Generate,
    Eval,
    Bench,
}

impl Stage {
    pub const ALL: [Stage; 7] =
        [Stage::Ingest, Stage::Segment, Stage::Train, Stage::Index, Stage::Generate, Stage::Eval, Stage::Bench];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Segment => "segment",
            Stage::Train => "train",
            Stage::Index => "index",
            Stage::Generate => "generate",
            Stage::Eval => "eval",
            Stage::Bench => "bench",
        }
    }

    pub fn parse(s: &str) -> CliResult<Self> {
        Stage::ALL.into_iter().find(|st| st.name() == s).ok_or_else(|| CliError::Usage(format!("unknown stage {s:?}")))
    }
}

/// Half-open range of document positions in the source corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocRange(pub usize, pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub steps: usize,
    pub lr: f64,
    pub clip: f64,
    pub include_tokens: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { steps: 200, lr: 0.5, clip: 1.0, include_tokens: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateSettings {
    pub mode: DecodeMode,
    pub p: f64,
    pub max_new_tokens: usize,
    /// Leading tokens of each prefix document used as the prompt.
    pub prefix_tokens: usize,
    pub coarse_refresh: usize,
    pub k_docs: usize,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        Self { mode: DecodeMode::Greedy, p: 0.95, max_new_tokens: 128, prefix_tokens: 8, coarse_refresh: 1, k_docs: 1024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    /// JSONL corpus; `null` selects the bundled demo corpus.
    pub corpus: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub d: usize,
    pub train_docs: DocRange,
    pub index_docs: Vec<DocRange>,
    pub prefix_docs: DocRange,
    pub stages: Vec<Stage>,
    pub segment: SegmenterConfig,
    pub train: TrainSettings,
    pub generate: GenerateSettings,
    pub bench_runs: usize,
    pub backend: BackendKind,
    pub sidecar_url: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::preset(Preset::Standard)
    }
}

impl RunConfig {
    /// Three settings over the demo corpus, all prompted with documents
    /// 180..200: index = training data; index = documents never trained
    /// on; index = training data plus extra documents.
    pub fn preset(p: Preset) -> Self {
        let (name, train, index) = match p {
            Preset::Standard => ("standard", DocRange(0, 180), vec![DocRange(0, 180)]),
            Preset::DomainSwap => ("domain-swap", DocRange(0, 100), vec![DocRange(100, 180)]),
            Preset::EnlargedIndex => ("enlarged-index", DocRange(0, 100), vec![DocRange(0, 180)]),
        };
        Self {
            name: name.into(),
            corpus: None,
            out_dir: PathBuf::from("runs").join(name),
            seed: 0,
            d: 64,
            train_docs: train,
            index_docs: index,
            prefix_docs: DocRange(180, 200),
            stages: Stage::ALL.to_vec(),
            segment: SegmenterConfig { l_min: 2, l_max: 8, k_neighbors: 8 },
            train: TrainSettings::default(),
            generate: GenerateSettings::default(),
            bench_runs: MIN_RUNS,
            backend: BackendKind::Toy,
            sidecar_url: None,
        }
    }

    pub fn resolve(args: &RunArgs) -> CliResult<Self> {
        let mut c = match (&args.config, args.preset) {
            (Some(path), _) => artifacts::read_json(path).map_err(|e| match e {
                CliError::Data(m) => CliError::Usage(m),
                other => other,
            })?,
            (None, Some(p)) => Self::preset(p),
            (None, None) => return Err(CliError::Usage("give --config or --preset".into())),
        };
        if let Some(d) = &args.out_dir {
            c.out_dir = d.clone();
        }
        if let Some(s) = args.seed {
            c.seed = s;
        }
        if let Some(s) = args.steps {
            c.train.steps = s;
        }
        if let Some(st) = &args.stages {
            c.stages = st.iter().filter(|s| !s.is_empty()).map(|s| Stage::parse(s)).collect::<CliResult<_>>()?;
        }
        if let Some(b) = args.backend {
            c.backend = b;
        }
        if let Some(u) = &args.sidecar_url {
            c.sidecar_url = Some(u.clone());
        }
        Ok(c)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn backend_args(&self) -> BackendArgs {
        BackendArgs { backend: self.backend, sidecar_url: self.sidecar_url.clone() }
    }

    fn generation(&self, exec: Exec) -> GenerationConfig {
        let g = &self.generate;
        GenerationConfig {
            mode: g.mode,
            p: g.p,
            max_new_tokens: g.max_new_tokens,
            prefix_tokens: g.prefix_tokens,
            seed: self.seed,
            search: SearchConfig { k_docs: g.k_docs, ..SearchConfig::default() },
            coarse_refresh: g.coarse_refresh,
            exec,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PrefixRecord {
    doc: i64,
    text: String,
    tokens: Vec<TokenId>,
}

fn source_text(c: &RunConfig) -> CliResult<String> {
    match &c.corpus {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::data(p.display(), e)),
        None => Ok(DEMO_CORPUS.to_string()),
    }
}

/// Re-ingests the documents at the given positions, each at most once,
/// in first-seen order.
fn subset(full: &Corpus, ranges: &[DocRange]) -> CliResult<Corpus> {
    let mut seen = BTreeSet::new();
    let mut lines = String::new();
    for &DocRange(a, b) in ranges {
        if a > b || b > full.len() {
            return Err(CliError::Usage(format!("document range [{a}, {b}) outside a corpus of {}", full.len())));
        }
        for d in &full.documents[a..b] {
            if seen.insert(d.id) {
                lines.push_str(&json!({ "id": d.key, "text": d.text }).to_string());
                lines.push('\n');
            }
        }
    }
    Ok(Corpus::ingest(lines.as_bytes())?)
}

fn ingest(c: &RunConfig) -> CliResult<Value> {
    let text = source_text(c)?;
    let full = Corpus::ingest(text.as_bytes())?;
    let train = subset(&full, &[c.train_docs])?;
    if train.is_empty() {
        return Err(CliError::Usage("empty training range".into()));
    }
    let index = subset(&full, &c.index_docs)?.retokenize(&train.vocab);
    let prompts = subset(&full, &[c.prefix_docs])?.retokenize(&train.vocab);
    let prefixes: Vec<PrefixRecord> = prompts
        .documents
        .iter()
        .filter(|d| !d.is_empty())
        .map(|d| {
            let tokens = d.tokens[..d.len().min(c.generate.prefix_tokens.max(1))].to_vec();
            Ok(PrefixRecord { doc: d.key, text: detokenize(&tokens, &train.vocab)?, tokens })
        })
        .collect::<CliResult<_>>()?;
    train.save(c.path("train.corpus.json")).map_err(|e| CliError::Data(e.to_string()))?;
    index.save(c.path("index.corpus.json")).map_err(|e| CliError::Data(e.to_string()))?;
    artifacts::write_jsonl(&c.path("prefixes.jsonl"), &prefixes)?;
    Ok(json!({ "train": corpus_summary(&train), "index": corpus_summary(&index), "prefixes": prefixes.len() }))
}

fn seeded_params(c: &RunConfig, corpus: &Corpus) -> CliResult<ToyParams> {
    ToyParams::seeded(c.seed, corpus.vocab.len(), c.d).map_err(|e| CliError::Usage(e.to_string()))
}

fn segment(c: &RunConfig, exec: Exec) -> CliResult<Value> {
    let corpus = artifacts::load_corpus(&c.path("train.corpus.json"))?;
    let params = seeded_params(c, &corpus)?;
    let docs = commands::segment_corpus(&corpus, c.segment, &params, exec)?;
    save_segments(c.path("segments.jsonl"), &docs)?;
    Ok(segments_summary(&docs))
}

fn train(c: &RunConfig, exec: Exec) -> CliResult<Value> {
    let corpus = artifacts::load_corpus(&c.path("train.corpus.json"))?;
    let segments = load_segments(c.path("segments.jsonl"))?;
    let config = TrainConfig {
        steps: c.train.steps,
        lr: c.train.lr,
        seed: c.seed,
        d: c.d,
        clip: c.train.clip,
        loss: LossConfig { l_max: c.segment.l_max, include_tokens: c.train.include_tokens, exec },
    };
    commands::train_and_save(&corpus, &segments, &config, &c.path("params.json"), &c.path("train.log.jsonl"))
}

fn index(c: &RunConfig, exec: Exec) -> CliResult<Value> {
    let corpus = artifacts::load_corpus(&c.path("index.corpus.json"))?;
    let params = artifacts::load_params(&c.path("params.json"))?;
    if params.vocab_size() != corpus.vocab.len() {
        return Err(CliError::Data("trained parameters and index corpus disagree on the vocabulary".into()));
    }
    commands::index_corpus(&corpus, params, &c.backend_args(), c.segment.l_max, exec, &c.path("index.cog"))
}

fn load_prefixes(c: &RunConfig) -> CliResult<Vec<PrefixRecord>> {
    let text = std::fs::read_to_string(c.path("prefixes.jsonl"))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::data("prefixes.jsonl", e)))
        .collect()
}

fn generate(c: &RunConfig, exec: Exec) -> CliResult<Value> {
    let idx = load_index(c.path("index.cog"))?;
    let backend = backend::for_index(&c.backend_args(), &idx)?;
    let prefixes: Vec<(String, Vec<TokenId>)> = load_prefixes(c)?.into_iter().map(|p| (p.text, p.tokens)).collect();
    let traces = c.path("traces");
    if traces.exists() {
        std::fs::remove_dir_all(&traces)?;
    }
    let config = c.generation(exec);
    let samples = commands::generate_samples(&idx, backend.as_ref(), &prefixes, &config, &traces.join("sample.jsonl"))?;
    artifacts::write_jsonl(&c.path("generations.jsonl"), &samples)?;
    let steps: usize = samples.iter().map(|s| s.steps).sum();
    let tokens: usize = samples.iter().map(|s| s.tokens).sum();
    Ok(json!({ "samples": samples.len(), "steps": steps, "tokens": tokens }))
}

fn eval(c: &RunConfig) -> CliResult<Value> {
    let pattern = c.path("traces").join("*.jsonl");
    let out = commands::eval_traces(&pattern.to_string_lossy())?;
    artifacts::write_json(&c.path("eval.json"), &out)?;
    Ok(json!({ "diversity": out.report.diversity, "tokens_per_step": out.step_stats.mean_length }))
}

fn run_bench(c: &RunConfig, exec: Exec) -> CliResult<Value> {
    let idx = load_index(c.path("index.cog"))?;
    let backend = backend::for_index(&c.backend_args(), &idx)?;
    let prefixes: Vec<Vec<TokenId>> = load_prefixes(c)?.into_iter().map(|p| p.tokens).collect();
    let report = bench(&idx, backend.as_ref(), &prefixes, &c.generation(exec), c.bench_runs)?;
    artifacts::write_json(&c.path("bench.json"), &report)?;
    serde_json::to_value(&report).map_err(|e| CliError::Internal(e.to_string()))
}

fn run_stage(stage: Stage, c: &RunConfig, exec: Exec) -> CliResult<Value> {
    match stage {
        Stage::Ingest => ingest(c),
        Stage::Segment => segment(c, exec),
        Stage::Train => train(c, exec),
        Stage::Index => index(c, exec),
        Stage::Generate => generate(c, exec),
        Stage::Eval => eval(c),
        Stage::Bench => run_bench(c, exec),
    }
}

/// Runs the configured stages in order, halting at the first failure with
/// the stage named.
pub fn run_pipeline(c: &RunConfig, exec: Exec) -> CliResult<Value> {
    let mut summaries = Map::new();
    if c.stages.is_empty() {
        return Ok(json!({ "name": c.name, "stages": summaries }));
    }
    artifacts::write_json(&c.path("run.json"), c)?;
    for &stage in &c.stages {
        let s = run_stage(stage, c, exec).map_err(|e| e.in_stage(stage.name()))?;
        summaries.insert(stage.name().into(), s);
    }
    Ok(json!({ "name": c.name, "out_dir": c.out_dir, "seed": c.seed, "stages": summaries }))
}

pub fn run(args: &RunArgs, exec: Exec) -> CliResult<Value> {
    let config = RunConfig::resolve(args)?;
    if args.print_config {
        return serde_json::to_value(&config).map_err(|e| CliError::Internal(e.to_string()));
    }
    run_pipeline(&config, exec)
}
