//! Generation by repeated phrase selection over the dynamic vocabulary.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{detokenize, tokenize_frozen, CorpusError, TokenId};
use crate::encoder::{EncoderBackend, EncoderError, PrefixState};
use crate::index::{canonical_key, IndexError, PhraseIndex, Scored, SearchConfig};
use crate::par::Exec;
use crate::segmenter::Segment;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("no candidates to choose from")]
    EmptyCandidates,
    #[error("non-finite score {0}")]
    NonFiniteScore(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("trace line {line}: {reason}")]
    MalformedTrace { line: usize, reason: String },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Greedy,
    Nucleus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub mode: DecodeMode,
    pub p: f64,
    pub max_new_tokens: usize,
    /// How many leading tokens of a document serve as the prefix when
    /// prefixes are cut from a corpus.
    pub prefix_tokens: usize,
    pub seed: u64,
    pub search: SearchConfig,
    /// Re-run document retrieval every this many steps.
    pub coarse_refresh: usize,
    pub exec: Exec,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            mode: DecodeMode::Greedy,
            p: 0.95,
            max_new_tokens: 128,
            prefix_tokens: 32,
            seed: 0,
            search: SearchConfig::default(),
            coarse_refresh: 1,
            exec: Exec::default(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(DecodeError::InvalidConfig(format!("p must lie in (0, 1], got {}", self.p)));
        }
        if self.coarse_refresh == 0 {
            return Err(DecodeError::InvalidConfig("coarse_refresh must be >= 1".into()));
        }
        Ok(())
    }
}

/// Softmax at temperature 1 with max subtraction.
pub fn next_distribution(scores: &[f64]) -> Result<Vec<f64>, DecodeError> {
    if scores.is_empty() {
        return Err(DecodeError::EmptyCandidates);
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(DecodeError::NonFiniteScore(bad));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= z);
    Ok(out)
}

/// Index of the highest score; ties go to the candidate first in canonical
/// order (tokens by id, then phrases by `(doc, s, e)`).
pub fn greedy_select(candidates: &[Scored]) -> Result<usize, DecodeError> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        if !c.score.is_finite() {
            return Err(DecodeError::NonFiniteScore(c.score));
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let cb = &candidates[b];
                let better = c.score > cb.score
                    || (c.score == cb.score && canonical_key(&c.reference) < canonical_key(&cb.reference));
                Some(if better { i } else { b })
            }
        };
    }
    best.ok_or(DecodeError::EmptyCandidates)
}

/// The nucleus of `probs`: indices sorted by descending probability (ties by
/// index), cut at the smallest prefix whose mass reaches `p`.
pub fn nucleus(probs: &[f64], p: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut mass = 0.0;
    for (n, &i) in order.iter().enumerate() {
        mass += probs[i];
        if mass >= p {
            order.truncate(n + 1);
            break;
        }
    }
    order
}

/// Draws an index from the renormalised nucleus of `probs`.
pub fn nucleus_sample<R: Rng + ?Sized>(probs: &[f64], p: f64, rng: &mut R) -> usize {
    let kept = nucleus(probs, p);
    let mass: f64 = kept.iter().map(|&i| probs[i]).sum();
    let u: f64 = rng.random::<f64>() * mass;
    let mut acc = 0.0;
    for &i in &kept {
        acc += probs[i];
        if u < acc {
            return i;
        }
    }
    *kept.last().expect("nucleus of a non-empty distribution is non-empty")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    /// The selected candidate; a phrase's end is clipped to what was emitted.
    pub segment: Segment,
    pub score: f64,
    pub prob: f64,
    pub tokens: Vec<TokenId>,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenerationTrace {
    pub seed: u64,
    pub steps: Vec<TraceStep>,
}

impl GenerationTrace {
    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    pub fn token_count(&self) -> usize {
        self.steps.iter().map(|s| s.tokens.len()).sum()
    }

    pub fn tokens(&self) -> Vec<TokenId> {
        self.steps.iter().flat_map(|s| s.tokens.iter().copied()).collect()
    }

    pub fn lines(&self) -> Vec<TraceLine> {
        self.steps.iter().map(TraceLine::from).collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), DecodeError> {
        for line in self.lines() {
            serde_json::to_writer(&mut w, &line).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// One line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub kind: String,
    pub src: Option<usize>,
    pub s: Option<usize>,
    pub e: Option<usize>,
    pub token: Option<u32>,
    pub score: f64,
    pub prob: f64,
    pub surface: String,
}

impl From<&TraceStep> for TraceLine {
    fn from(step: &TraceStep) -> Self {
        let (kind, src, s, e, token) = match step.segment {
            Segment::Phrase { source_doc, start, end } => ("phrase", Some(source_doc), Some(start), Some(end), None),
            Segment::Token { token } => ("token", None, None, None, Some(token.0)),
        };
        TraceLine { kind: kind.into(), src, s, e, token, score: step.score, prob: step.prob, surface: step.surface.clone() }
    }
}

impl TraceLine {
    /// Tokens emitted at this step; surfaces never contain whitespace.
    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.surface.split_whitespace()
    }

    pub fn segment_len(&self) -> usize {
        self.surfaces().count()
    }
}

pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<TraceLine>, DecodeError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TraceLine =
            serde_json::from_str(&line).map_err(|e| DecodeError::MalformedTrace { line: i + 1, reason: e.to_string() })?;
        if parsed.kind != "phrase" && parsed.kind != "token" {
            return Err(DecodeError::MalformedTrace { line: i + 1, reason: format!("unknown kind {:?}", parsed.kind) });
        }
        out.push(parsed);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepStats {
    /// Segment length → number of steps.
    pub histogram: BTreeMap<usize, usize>,
    pub mean_length: f64,
    pub steps: usize,
    pub tokens: usize,
}

impl StepStats {
    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Self {
        let mut s = StepStats::default();
        for l in lengths {
            *s.histogram.entry(l).or_default() += 1;
            s.steps += 1;
            s.tokens += l;
        }
        if s.steps > 0 {
            s.mean_length = s.tokens as f64 / s.steps as f64;
        }
        s
    }

    pub fn tokens_per_step(&self) -> f64 {
        self.mean_length
    }
}

pub fn step_stats(trace: &GenerationTrace) -> StepStats {
    StepStats::from_lengths(trace.steps.iter().map(|s| s.tokens.len()))
}

#[derive(Debug, Clone)]
pub struct Generation {
    pub text: String,
    pub trace: GenerationTrace,
    /// Prefix state after the last emitted token.
    pub state: PrefixState,
}

/// Tokenizes `prefix` against the index vocabulary and generates.
pub fn generate(
    index: &PhraseIndex,
    backend: &dyn EncoderBackend,
    prefix: &str,
    config: &GenerationConfig,
) -> Result<Generation, DecodeError> {
    let tokens = tokenize_frozen(prefix, &index.vocab);
    generate_from_tokens(index, backend, &tokens, config)
}

pub fn generate_from_tokens(
    index: &PhraseIndex,
    backend: &dyn EncoderBackend,
    prefix: &[TokenId],
    config: &GenerationConfig,
) -> Result<Generation, DecodeError> {
    config.validate()?;
    index.check_backend(backend)?;
    let mut state = backend.prefix_init(prefix)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = GenerationTrace { seed: config.seed, steps: Vec::new() };
    let mut emitted = 0;
    let mut docs: Vec<usize> = Vec::new();

    while emitted < config.max_new_tokens {
        if !config.search.tokens_only && trace.steps.len().is_multiple_of(config.coarse_refresh) {
            docs = index.retrieve_documents(backend, &state, config.search.k_docs);
        }
        let scored = index.score_fast(&state.q, &docs, &config.search, config.exec)?;
        let scores: Vec<f64> = scored.iter().map(|c| c.score).collect();
        let probs = next_distribution(&scores)?;
        let pick = match config.mode {
            DecodeMode::Greedy => greedy_select(&scored)?,
            DecodeMode::Nucleus => nucleus_sample(&probs, config.p, &mut rng),
        };
        let chosen = scored[pick];
        let mut tokens = index.candidate_tokens(&chosen.reference)?;
        tokens.truncate(config.max_new_tokens - emitted);
        let segment = match chosen.reference {
            Segment::Phrase { source_doc, start, .. } => {
                Segment::Phrase { source_doc, start, end: start + tokens.len() - 1 }
            }
            token => token,
        };
        for &t in &tokens {
            state = backend.prefix_append(&state, t)?;
        }
        emitted += tokens.len();
        let surface = detokenize(&tokens, &index.vocab)?;
        trace.steps.push(TraceStep { segment, score: chosen.score, prob: probs[pick], tokens, surface });
    }
    let text = detokenize(&trace.tokens(), &index.vocab)?;
    Ok(Generation { text, trace, state })
}
