//! The dynamic vocabulary: per-document start/end rows, the token table and
//! the coarse-to-fine candidate search.
//!
//! Only token-level rows are stored; every span's vector is assembled on
//! demand from `start[s]` and `end[e]`, so storage grows with the number of
//! tokens rather than the number of spans. Stored vectors are `f32`; scores
//! accumulate in `f64`.

mod format;

pub use format::{load_index, save_index, FORMAT_VERSION, MAGIC};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, TokenId, Vocabulary};
use crate::encoder::{DocumentReps, EncoderBackend, EncoderError, PrefixState, ToyParams};
use crate::math::{cosine, dot_f32, split_dot, split_dot_f32, top_k_desc};
use crate::par::Exec;
use crate::segmenter::Segment;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot index an empty corpus")]
    EmptyCorpus,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("index was built with encoder {index:016x}, backend is {backend:016x}")]
    FingerprintMismatch { index: u64, backend: u64 },
    #[error("not an index file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported index format version {found} (expected {expected})")]
    Version { found: u16, expected: u16 },
    #[error("truncated index file: {0}")]
    Truncated(String),
    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error("document {0} not in index")]
    MissingDocument(usize),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexHeader {
    pub d: usize,
    pub d_t: usize,
    pub l_max: usize,
    pub seed: u64,
    pub fingerprint: u64,
    pub alpha: f64,
}

impl IndexHeader {
    #[inline]
    pub fn half(&self) -> usize {
        self.d / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexedDoc {
    /// The source record's id.
    pub key: i64,
    pub tokens: Vec<TokenId>,
    /// `m × d/2`, row-major.
    pub start: Vec<f32>,
    pub end: Vec<f32>,
}

impl IndexedDoc {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhraseIndex {
    pub header: IndexHeader,
    pub vocab: Vocabulary,
    pub docs: Vec<IndexedDoc>,
    /// `N × d/2` coarse-retrieval vectors (mean start row per document).
    pub doc_vectors: Vec<f32>,
    /// `|V| × d` context-independent token embeddings.
    pub token_table: Vec<f32>,
    /// Embedded encoder parameters when the index was built with the toy backend.
    pub backend: Option<ToyParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexOptions {
    pub l_max: usize,
    pub exec: Exec,
}

impl Default for IndexOptions {
    fn default() -> Self {
        Self { l_max: 8, exec: Exec::default() }
    }
}

fn to_f32(xs: &[f64]) -> Vec<f32> {
    xs.iter().map(|&x| x as f32).collect()
}

/// Encodes every document offline. Deterministic for a fixed corpus and backend.
pub fn build_index(
    corpus: &Corpus,
    backend: &dyn EncoderBackend,
    options: IndexOptions,
) -> Result<PhraseIndex, IndexError> {
    if corpus.is_empty() {
        return Err(IndexError::EmptyCorpus);
    }
    let dims = backend.dims();
    if backend.vocab_size() != corpus.vocab.len() {
        return Err(IndexError::Dimension(format!(
            "backend vocabulary has {} entries, corpus vocabulary {}",
            backend.vocab_size(),
            corpus.vocab.len()
        )));
    }
    let table = backend.token_table();
    if table.dim() != dims.d || table.vocab_size() != corpus.vocab.len() {
        return Err(IndexError::Dimension(format!(
            "token table is {}x{}, expected {}x{}",
            table.vocab_size(),
            table.dim(),
            corpus.vocab.len(),
            dims.d
        )));
    }
    if options.l_max == 0 {
        return Err(IndexError::Dimension("l_max must be positive".into()));
    }
    let encoded: Vec<Result<(IndexedDoc, Vec<f64>), EncoderError>> = options.exec.map(&corpus.documents, |doc| {
        let reps: DocumentReps = backend.encode_document(&doc.tokens)?;
        let pooled = reps.mean_start();
        Ok((
            IndexedDoc { key: doc.key, tokens: doc.tokens.clone(), start: to_f32(&reps.start.data), end: to_f32(&reps.end.data) },
            pooled,
        ))
    });
    let mut docs = Vec::with_capacity(corpus.len());
    let mut doc_vectors = Vec::with_capacity(corpus.len() * dims.half());
    for r in encoded {
        let (doc, pooled) = r?;
        docs.push(doc);
        doc_vectors.extend(to_f32(&pooled));
    }
    let params = backend.toy_params();
    Ok(PhraseIndex {
        header: IndexHeader {
            d: dims.d,
            d_t: dims.d_t,
            l_max: options.l_max,
            seed: params.map_or(0, |p| p.seed),
            fingerprint: backend.fingerprint(),
            alpha: params.map_or(0.0, |p| p.alpha),
        },
        vocab: corpus.vocab.clone(),
        docs,
        doc_vectors,
        token_table: to_f32(&table.0.data),
        backend: params.cloned(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Documents retrieved per prefix in the coarse stage.
    pub k_docs: usize,
    pub include_tokens: bool,
    /// Skip phrase candidates entirely: plain token-level decoding.
    pub tokens_only: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { k_docs: 1024, include_tokens: true, tokens_only: false }
    }
}

impl SearchConfig {
    pub fn wants_tokens(&self) -> bool {
        self.include_tokens || self.tokens_only
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub reference: Segment,
    pub vector: Vec<f64>,
    pub score: f64,
}

/// Lightweight scored candidate used on the decoding hot path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub reference: Segment,
    pub score: f64,
}

/// Total order used for deterministic tie-breaking: tokens by id, then
/// phrases by `(doc, s, e)`.
pub fn canonical_key(seg: &Segment) -> (u8, usize, usize, usize) {
    match *seg {
        Segment::Token { token } => (0, token.index(), 0, 0),
        Segment::Phrase { source_doc, start, end } => (1, source_doc, start, end),
    }
}

impl PhraseIndex {
    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn half(&self) -> usize {
        self.header.half()
    }

    pub fn doc(&self, id: usize) -> Result<&IndexedDoc, IndexError> {
        self.docs.get(id).ok_or(IndexError::MissingDocument(id))
    }

    pub fn start_row(&self, doc: usize, t: usize) -> &[f32] {
        let h = self.half();
        &self.docs[doc].start[t * h..(t + 1) * h]
    }

    pub fn end_row(&self, doc: usize, t: usize) -> &[f32] {
        let h = self.half();
        &self.docs[doc].end[t * h..(t + 1) * h]
    }

    pub fn doc_vector(&self, doc: usize) -> &[f32] {
        let h = self.half();
        &self.doc_vectors[doc * h..(doc + 1) * h]
    }

    pub fn token_row(&self, w: TokenId) -> &[f32] {
        let d = self.header.d;
        &self.token_table[w.index() * d..(w.index() + 1) * d]
    }

    pub fn total_tokens(&self) -> usize {
        self.docs.iter().map(IndexedDoc::len).sum()
    }

    /// Refuses a backend whose parameters differ from the ones used at build time.
    pub fn check_backend(&self, backend: &dyn EncoderBackend) -> Result<(), IndexError> {
        if backend.fingerprint() != self.header.fingerprint {
            return Err(IndexError::FingerprintMismatch { index: self.header.fingerprint, backend: backend.fingerprint() });
        }
        if backend.dims().d != self.header.d {
            return Err(IndexError::Dimension(format!("backend d = {}, index d = {}", backend.dims().d, self.header.d)));
        }
        Ok(())
    }

    /// Number of phrase candidates one document contributes:
    /// `Σ_{ℓ=1}^{min(l_max, m)} (m − ℓ + 1)`.
    pub fn span_count(m: usize, l_max: usize) -> usize {
        (1..=l_max.min(m)).map(|l| m - l + 1).sum()
    }

    /// `[start[s]; end[e]]` widened to `f64`.
    pub fn phrase_vector(&self, doc: usize, s: usize, e: usize) -> Result<Vec<f64>, IndexError> {
        let d = self.doc(doc)?;
        if s > e || e >= d.len() {
            return Err(IndexError::Encoder(EncoderError::InvalidSpan { s, e, len: d.len() }));
        }
        let mut v: Vec<f64> = self.start_row(doc, s).iter().map(|&x| f64::from(x)).collect();
        v.extend(self.end_row(doc, e).iter().map(|&x| f64::from(x)));
        Ok(v)
    }

    /// Coarse stage: the `k` documents whose retrieval vector is most cosine
    /// similar to the prefix's, ties by ascending id.
    pub fn retrieve_documents(&self, backend: &dyn EncoderBackend, state: &PrefixState, k: usize) -> Vec<usize> {
        if k == 0 {
            return Vec::new();
        }
        let pv = backend.prefix_vector(state);
        let sims: Vec<f64> = (0..self.n_docs())
            .map(|i| {
                let dv: Vec<f64> = self.doc_vector(i).iter().map(|&x| f64::from(x)).collect();
                cosine(&pv, &dv)
            })
            .collect();
        top_k_desc(&sims, k)
    }

    /// Materialises every candidate: token candidates first (by id), then all
    /// spans of length `1..=l_max` of each listed document in `(s, e)` order.
    pub fn collect_candidates(&self, doc_ids: &[usize], config: &SearchConfig) -> Result<Vec<Candidate>, IndexError> {
        let mut out = Vec::new();
        if config.wants_tokens() {
            for w in 0..self.vocab_size() {
                let t = TokenId(w as u32);
                out.push(Candidate {
                    reference: Segment::Token { token: t },
                    vector: self.token_row(t).iter().map(|&x| f64::from(x)).collect(),
                    score: 0.0,
                });
            }
        }
        if config.tokens_only {
            return Ok(out);
        }
        for &doc in doc_ids {
            let m = self.doc(doc)?.len();
            for s in 0..m {
                for e in s..m.min(s + self.header.l_max) {
                    out.push(Candidate {
                        reference: Segment::Phrase { source_doc: doc, start: s, end: e },
                        vector: self.phrase_vector(doc, s, e)?,
                        score: 0.0,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Scores the candidates of the listed documents (plus tokens) without
    /// materialising span vectors. Bit-identical to
    /// [`collect_candidates`](Self::collect_candidates) + [`score_candidates`]
    /// and in the same order.
    pub fn score_fast(&self, q: &[f64], doc_ids: &[usize], config: &SearchConfig, exec: Exec) -> Result<Vec<Scored>, IndexError> {
        if q.len() != self.header.d {
            return Err(IndexError::Dimension(format!("query has {} entries, index d = {}", q.len(), self.header.d)));
        }
        let mut out = Vec::new();
        if config.wants_tokens() {
            out.reserve(self.vocab_size());
            for w in 0..self.vocab_size() {
                let t = TokenId(w as u32);
                out.push(Scored { reference: Segment::Token { token: t }, score: split_dot_f32(q, self.token_row(t)) });
            }
        }
        if config.tokens_only {
            return Ok(out);
        }
        for &d in doc_ids {
            self.doc(d)?;
        }
        let h = self.half();
        let (qa, qb) = q.split_at(h);
        let l_max = self.header.l_max;
        let per_doc = exec.map(doc_ids, |&doc| {
            let m = self.docs[doc].len();
            let ss: Vec<f64> = (0..m).map(|t| dot_f32(qa, self.start_row(doc, t))).collect();
            let ee: Vec<f64> = (0..m).map(|t| dot_f32(qb, self.end_row(doc, t))).collect();
            let mut v = Vec::with_capacity(Self::span_count(m, l_max));
            for s in 0..m {
                for e in s..m.min(s + l_max) {
                    v.push(Scored { reference: Segment::Phrase { source_doc: doc, start: s, end: e }, score: ss[s] + ee[e] });
                }
            }
            v
        });
        for v in per_doc {
            out.extend(v);
        }
        Ok(out)
    }

    /// Tokens a candidate stands for.
    pub fn candidate_tokens(&self, seg: &Segment) -> Result<Vec<TokenId>, IndexError> {
        match *seg {
            Segment::Token { token } => Ok(vec![token]),
            Segment::Phrase { source_doc, start, end } => {
                let d = self.doc(source_doc)?;
                d.tokens
                    .get(start..=end)
                    .map(<[TokenId]>::to_vec)
                    .ok_or(IndexError::Encoder(EncoderError::InvalidSpan { s: start, e: end, len: d.len() }))
            }
        }
    }
}

/// Fitness of each candidate against the prefix query; order is preserved.
pub fn score_candidates(q: &[f64], candidates: &mut [Candidate]) -> Result<(), IndexError> {
    for c in candidates.iter_mut() {
        if c.vector.len() != q.len() {
            return Err(IndexError::Dimension(format!("candidate has {} entries, query {}", c.vector.len(), q.len())));
        }
        c.score = split_dot(q, &c.vector);
    }
    Ok(())
}
