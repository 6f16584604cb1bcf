//! One function per subcommand. Each returns a JSON summary for stdout.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use cog_core::corpus::{tokenize_frozen, Corpus, TokenId};
use cog_core::decoder::{generate_from_tokens, read_trace, GenerationConfig, StepStats};
use cog_core::encoder::EncoderBackend;
use cog_core::index::{build_index, load_index, save_index, IndexOptions, PhraseIndex, SearchConfig};
use cog_core::metrics::{evaluate, EvalReport};
use cog_core::segmenter::{save_segments, load_segments, Segment, SegmentedDocument, Segmenter, SegmenterConfig};
use cog_core::training::{train_toy, LossConfig, TrainConfig};
use cog_core::{Exec, ToyParams};

use crate::args::{
    BackendArgs, BenchArgs, BuildIndexArgs, DecodeArgs, EncoderInit, EvalArgs, GenerateArgs, IngestArgs, SegmentArgs,
    TrainArgs,
};
use crate::artifacts::{self, sample_path};
use crate::backend;
use crate::bench::{bench, BenchReport};
use crate::error::{CliError, CliResult};

pub fn ingest(a: &IngestArgs) -> CliResult<Value> {
    let mut corpus = Corpus::ingest(artifacts::open(&a.input)?).map_err(|e| CliError::data(a.input.display(), e))?;
    if let Some(path) = &a.vocab_from {
        corpus = corpus.retokenize(&artifacts::load_corpus(path)?.vocab);
    }
    corpus.save(&a.out)?;
    Ok(corpus_summary(&corpus))
}

pub fn corpus_summary(c: &Corpus) -> Value {
    let unk = c.documents.iter().flat_map(|d| &d.tokens).filter(|t| **t == TokenId::UNK).count();
    json!({ "docs": c.len(), "tokens": c.total_tokens(), "vocab": c.vocab.len(), "unk_tokens": unk })
}

fn init_params(init: &EncoderInit, corpus: &Corpus) -> CliResult<ToyParams> {
    let params = match &init.params {
        Some(path) => artifacts::load_params(path)?,
        None => ToyParams::seeded(init.seed, corpus.vocab.len(), init.d).map_err(|e| CliError::Usage(e.to_string()))?,
    };
    if params.vocab_size() != corpus.vocab.len() {
        return Err(CliError::Data(format!(
            "encoder parameters cover {} tokens but the corpus vocabulary has {}",
            params.vocab_size(),
            corpus.vocab.len()
        )));
    }
    Ok(params)
}

pub fn segment_corpus(
    corpus: &Corpus,
    config: SegmenterConfig,
    params: &ToyParams,
    exec: Exec,
) -> CliResult<Vec<SegmentedDocument>> {
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let seg = Segmenter::new(corpus, config, params, exec)?;
    Ok(seg.segment_all(exec)?)
}

pub fn segments_summary(docs: &[SegmentedDocument]) -> Value {
    let all = docs.iter().flat_map(|d| &d.segments);
    let (mut phrases, mut tokens, mut copied) = (0usize, 0usize, 0usize);
    for s in all {
        match s {
            Segment::Phrase { .. } => {
                phrases += 1;
                copied += s.len();
            }
            Segment::Token { .. } => tokens += 1,
        }
    }
    json!({ "docs": docs.len(), "phrases": phrases, "tokens": tokens, "copied_tokens": copied })
}

pub fn segment(a: &SegmentArgs, exec: Exec) -> CliResult<Value> {
    let corpus = artifacts::load_corpus(&a.corpus)?;
    let params = init_params(&a.encoder, &corpus)?;
    let config = SegmenterConfig { l_min: a.lmin, l_max: a.lmax, k_neighbors: a.k };
    let docs = segment_corpus(&corpus, config, &params, exec)?;
    save_segments(&a.out, &docs)?;
    Ok(segments_summary(&docs))
}

pub fn index_corpus(
    corpus: &Corpus,
    params: ToyParams,
    backend_args: &BackendArgs,
    l_max: usize,
    exec: Exec,
    out: &Path,
) -> CliResult<Value> {
    let backend = backend::for_corpus(backend_args, &corpus.vocab, params)?;
    let index = build_index(corpus, backend.as_ref(), IndexOptions { l_max, exec })?;
    save_index(&index, out)?;
    let bytes = std::fs::metadata(out)?.len();
    Ok(json!({
        "docs": index.n_docs(),
        "tokens": index.total_tokens(),
        "d": index.header.d,
        "fingerprint": format!("{:016x}", index.header.fingerprint),
        "bytes": bytes,
    }))
}

pub fn build(a: &BuildIndexArgs, exec: Exec) -> CliResult<Value> {
    let corpus = artifacts::load_corpus(&a.corpus)?;
    let params = init_params(&a.encoder, &corpus)?;
    index_corpus(&corpus, params, &a.backend, a.lmax, exec, &a.out)
}

pub fn train(a: &TrainArgs, exec: Exec) -> CliResult<Value> {
    let corpus = artifacts::load_corpus(&a.corpus)?;
    let segments = load_segments(&a.segments).map_err(|e| CliError::data(a.segments.display(), e))?;
    let config = TrainConfig {
        steps: a.steps,
        lr: a.lr,
        seed: a.seed,
        d: a.d,
        clip: a.clip,
        loss: LossConfig { l_max: a.lmax, include_tokens: !a.no_token_candidates, exec },
    };
    let log = a.log.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".log.jsonl");
        PathBuf::from(s)
    });
    train_and_save(&corpus, &segments, &config, &a.out, &log)
}

pub fn train_and_save(
    corpus: &Corpus,
    segments: &[SegmentedDocument],
    config: &TrainConfig,
    out: &Path,
    log: &Path,
) -> CliResult<Value> {
    if config.d == 0 || !config.d.is_multiple_of(2) {
        return Err(CliError::Usage(format!("d must be even and positive, got {}", config.d)));
    }
    let outcome = train_toy(corpus, segments, config, None)?;
    artifacts::write_json(out, &outcome.params)?;
    let mut w = artifacts::create(log)?;
    outcome.write_log(&mut w)?;
    std::io::Write::flush(&mut w)?;
    let last = outcome.final_entry();
    Ok(json!({
        "steps": last.step,
        "L": last.l,
        "L_p": last.l_p,
        "L_t": last.l_t,
        "acc": last.acc,
        "fingerprint": format!("{:016x}", outcome.params.fingerprint()),
    }))
}

pub fn generation_config(d: &DecodeArgs, tokens_only: bool, exec: Exec) -> GenerationConfig {
    GenerationConfig {
        mode: d.mode.into(),
        p: d.p,
        max_new_tokens: d.max_new_tokens,
        seed: d.seed,
        search: SearchConfig { k_docs: d.k_docs, tokens_only, ..SearchConfig::default() },
        coarse_refresh: d.coarse_refresh,
        exec,
        ..GenerationConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratedSample {
    pub prefix: String,
    pub text: String,
    pub steps: usize,
    pub tokens: usize,
    pub seed: u64,
}

/// Generates one continuation per prefix; prefix `i` uses seed `seed + i`
/// and its trace goes to `sample_path(trace_out, i, n)`.
pub fn generate_samples(
    index: &PhraseIndex,
    backend: &dyn EncoderBackend,
    prefixes: &[(String, Vec<TokenId>)],
    config: &GenerationConfig,
    trace_out: &Path,
) -> CliResult<Vec<GeneratedSample>> {
    config.validate()?;
    let n = prefixes.len();
    let mut out = Vec::with_capacity(n);
    for (i, (text, tokens)) in prefixes.iter().enumerate() {
        let cfg = GenerationConfig { seed: config.seed.wrapping_add(i as u64), ..*config };
        let g = generate_from_tokens(index, backend, tokens, &cfg)?;
        let mut w = artifacts::create(&sample_path(trace_out, i, n))?;
        g.trace.write_jsonl(&mut w)?;
        std::io::Write::flush(&mut w)?;
        out.push(GeneratedSample {
            prefix: text.clone(),
            text: g.text,
            steps: g.trace.step_count(),
            tokens: g.trace.token_count(),
            seed: cfg.seed,
        });
    }
    Ok(out)
}

fn tokenized_prefixes(index: &PhraseIndex, path: &Path) -> CliResult<Vec<(String, Vec<TokenId>)>> {
    let lines = artifacts::read_prefixes(path)?;
    Ok(lines.into_iter().map(|l| { let t = tokenize_frozen(&l, &index.vocab); (l, t) }).collect())
}

fn load(path: &Path) -> CliResult<PhraseIndex> {
    load_index(path).map_err(|e| CliError::data(path.display(), e))
}

pub fn generate(a: &GenerateArgs, exec: Exec) -> CliResult<Value> {
    let index = load(&a.index)?;
    let backend = backend::for_index(&a.backend, &index)?;
    let prefixes = tokenized_prefixes(&index, &a.prefix_file)?;
    let config = generation_config(&a.decode, a.tokens_only, exec);
    let samples = generate_samples(&index, backend.as_ref(), &prefixes, &config, &a.trace_out)?;
    if let Some(out) = &a.out {
        artifacts::write_jsonl(out, &samples)?;
    }
    let steps: usize = samples.iter().map(|s| s.steps).sum();
    let tokens: usize = samples.iter().map(|s| s.tokens).sum();
    Ok(json!({ "samples": samples.len(), "steps": steps, "tokens": tokens, "seed": config.seed }))
}

/// The eval report file: the metric report plus segment statistics over
/// every matched trace.
#[derive(Debug, Clone, Serialize)]
pub struct EvalOutput {
    pub files: Vec<String>,
    #[serde(flatten)]
    pub report: EvalReport,
    pub step_stats: StepStats,
}

pub fn eval_traces(pattern: &str) -> CliResult<EvalOutput> {
    let paths = glob::glob(pattern).map_err(|e| CliError::Usage(format!("bad glob {pattern:?}: {e}")))?;
    let mut files = Vec::new();
    let mut samples: Vec<Vec<String>> = Vec::new();
    let mut lengths = Vec::new();
    for p in paths {
        let p = p.map_err(|e| CliError::data(pattern, e))?;
        let lines = read_trace(artifacts::open(&p)?).map_err(|e| CliError::data(p.display(), e))?;
        lengths.extend(lines.iter().map(|l| l.segment_len()));
        samples.push(lines.iter().flat_map(|l| l.surfaces().map(str::to_string)).collect());
        files.push(p.display().to_string());
    }
    if files.is_empty() {
        return Err(CliError::Data(format!("no trace files match {pattern:?}")));
    }
    let report = evaluate(&samples)?;
    Ok(EvalOutput { files, report, step_stats: StepStats::from_lengths(lengths) })
}

pub fn eval(a: &EvalArgs) -> CliResult<Value> {
    let out = eval_traces(&a.traces)?;
    artifacts::write_json(&a.out, &out)?;
    Ok(json!({
        "samples": out.files.len(),
        "rep_2": out.report.rep_2,
        "rep_3": out.report.rep_3,
        "rep_4": out.report.rep_4,
        "diversity": out.report.diversity,
        "tokens_per_step": out.step_stats.mean_length,
    }))
}

pub fn run_bench(a: &BenchArgs, exec: Exec) -> CliResult<Value> {
    let index = load(&a.index)?;
    let backend = backend::for_index(&a.backend, &index)?;
    let prefixes: Vec<Vec<TokenId>> = tokenized_prefixes(&index, &a.prefix_file)?.into_iter().map(|p| p.1).collect();
    let config = generation_config(&a.decode, false, exec);
    let report: BenchReport = bench(&index, backend.as_ref(), &prefixes, &config, a.runs)?;
    if let Some(out) = &a.out {
        artifacts::write_json(out, &report)?;
    }
    serde_json::to_value(&report).map_err(|e| CliError::Internal(e.to_string()))
}
