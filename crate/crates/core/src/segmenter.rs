//! Forward-maximum-matching segmentation of training documents.
//!
//! Each document is scanned left to right. At every cursor the longest
//! prefix of the unsegmented remainder (capped at `l_max`) that occurs
//! contiguously inside one neighbor document is found; if it is at least
//! `l_min` tokens long it becomes a copied phrase, otherwise the next token
//! stands alone. Neighbors are the `k` documents whose mean contextual vector
//! is most cosine-similar. Matches never span two documents.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, TokenId};
use crate::encoder::{EncoderError, ToyParams};
use crate::math::cosine;
use crate::par::Exec;

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("document {0} not in corpus")]
    MissingDocument(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("document {doc}: {reason}")]
    InvalidSegmentation { doc: usize, reason: String },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    pub l_min: usize,
    pub l_max: usize,
    pub k_neighbors: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self { l_min: 2, l_max: 8, k_neighbors: 16 }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<(), SegmentError> {
        if self.l_min < 1 || self.l_min > self.l_max {
            return Err(SegmentError::InvalidConfig(format!(
                "need 1 <= l_min <= l_max, got l_min={} l_max={}",
                self.l_min, self.l_max
            )));
        }
        if self.k_neighbors < 1 {
            return Err(SegmentError::InvalidConfig("k_neighbors must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Segment {
    Phrase {
        #[serde(rename = "src")]
        source_doc: usize,
        #[serde(rename = "s")]
        start: usize,
        #[serde(rename = "e")]
        end: usize,
    },
    Token {
        #[serde(rename = "id")]
        token: TokenId,
    },
}

impl Segment {
    pub fn len(&self) -> usize {
        match *self {
            Segment::Phrase { start, end, .. } => end - start + 1,
            Segment::Token { .. } => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_phrase(&self) -> bool {
        matches!(self, Segment::Phrase { .. })
    }

    /// The tokens this segment stands for.
    pub fn tokens<'a>(&'a self, corpus: &'a Corpus) -> Result<&'a [TokenId], SegmentError> {
        match self {
            Segment::Phrase { source_doc, start, end } => {
                let d = corpus.documents.get(*source_doc).ok_or(SegmentError::MissingDocument(*source_doc))?;
                d.tokens.get(*start..=*end).ok_or_else(|| SegmentError::InvalidSegmentation {
                    doc: *source_doc,
                    reason: format!("span ({start}, {end}) outside document of {} tokens", d.len()),
                })
            }
            Segment::Token { token } => Ok(std::slice::from_ref(token)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentedDocument {
    #[serde(rename = "doc")]
    pub doc_id: usize,
    pub segments: Vec<Segment>,
}

impl SegmentedDocument {
    /// Concatenated segment tokens.
    pub fn reconstruct(&self, corpus: &Corpus) -> Result<Vec<TokenId>, SegmentError> {
        let mut out = Vec::new();
        for s in &self.segments {
            out.extend_from_slice(s.tokens(corpus)?);
        }
        Ok(out)
    }

    /// Checks reconstruction, source ≠ self, and the length bounds.
    pub fn validate(&self, corpus: &Corpus, config: &SegmenterConfig) -> Result<(), SegmentError> {
        let doc = corpus.documents.get(self.doc_id).ok_or(SegmentError::MissingDocument(self.doc_id))?;
        let invalid = |reason: String| SegmentError::InvalidSegmentation { doc: self.doc_id, reason };
        for s in &self.segments {
            if let Segment::Phrase { source_doc, start, end } = *s {
                if source_doc == self.doc_id {
                    return Err(invalid("phrase copied from its own document".into()));
                }
                if end < start {
                    return Err(invalid(format!("span ({start}, {end}) reversed")));
                }
                let len = end - start + 1;
                if len < config.l_min || len > config.l_max {
                    return Err(invalid(format!("phrase length {len} outside [{}, {}]", config.l_min, config.l_max)));
                }
            }
        }
        if self.reconstruct(corpus)? != doc.tokens {
            return Err(invalid("segments do not reconstruct the document".into()));
        }
        Ok(())
    }
}

/// First occurrence of `query` as a contiguous run, scanning `docs` in order
/// and each document left to right. Returns `(doc id, start)`.
pub fn search_phrase(corpus: &Corpus, query: &[TokenId], docs: &[usize]) -> Option<(usize, usize)> {
    if query.is_empty() {
        return None;
    }
    for &d in docs {
        let toks = &corpus.documents[d].tokens;
        if let Some(pos) = toks.windows(query.len()).position(|w| w == query) {
            return Some((d, pos));
        }
    }
    None
}

pub struct Segmenter<'a> {
    corpus: &'a Corpus,
    config: SegmenterConfig,
    pooled: Vec<Vec<f64>>,
}

impl<'a> Segmenter<'a> {
    /// Precomputes every document's mean contextual vector under `params`.
    pub fn new(corpus: &'a Corpus, config: SegmenterConfig, params: &ToyParams, exec: Exec) -> Result<Self, SegmentError> {
        config.validate()?;
        let pooled = exec
            .map(&corpus.documents, |d| params.mean_contextual(&d.tokens))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { corpus, config, pooled })
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    /// Up to `k` other documents, most similar first, ties by ascending id.
    pub fn neighbors(&self, doc_id: usize, k: usize) -> Result<Vec<usize>, SegmentError> {
        let me = self.pooled.get(doc_id).ok_or(SegmentError::MissingDocument(doc_id))?;
        let mut scored: Vec<(usize, f64)> = (0..self.pooled.len())
            .filter(|&j| j != doc_id)
            .map(|j| (j, cosine(me, &self.pooled[j])))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored.into_iter().map(|(j, _)| j).collect())
    }

    /// Greedy segmentation restricted to the top `k_neighbors` documents.
    pub fn segment_document(&self, doc_id: usize) -> Result<SegmentedDocument, SegmentError> {
        let doc = self.corpus.documents.get(doc_id).ok_or(SegmentError::MissingDocument(doc_id))?;
        let neighbors = self.neighbors(doc_id, self.config.k_neighbors)?;
        let toks = &doc.tokens;
        let mut segments = Vec::new();
        let mut cursor = 0;
        while cursor < toks.len() {
            let rest = &toks[cursor..];
            let cap = rest.len().min(self.config.l_max);
            // (length, doc, start); strict improvement keeps the earliest hit.
            let mut best: (usize, usize, usize) = (0, 0, 0);
            'outer: for &nb in &neighbors {
                let cand = &self.corpus.documents[nb].tokens;
                for start in 0..cand.len() {
                    let len = common_prefix(rest, &cand[start..], cap);
                    if len > best.0 {
                        best = (len, nb, start);
                        if len == cap {
                            break 'outer;
                        }
                    }
                }
            }
            let (len, src, start) = best;
            if len >= self.config.l_min {
                segments.push(Segment::Phrase { source_doc: src, start, end: start + len - 1 });
                cursor += len;
            } else {
                segments.push(Segment::Token { token: rest[0] });
                cursor += 1;
            }
        }
        Ok(SegmentedDocument { doc_id, segments })
    }

    /// Exhaustive variant: every other document is searched, longest
    /// candidate length first, with [`search_phrase`]. Document order follows
    /// the same similarity ranking so provenance ties resolve identically.
    pub fn brute_force_segment(&self, doc_id: usize) -> Result<SegmentedDocument, SegmentError> {
        let doc = self.corpus.documents.get(doc_id).ok_or(SegmentError::MissingDocument(doc_id))?;
        let all_others = self.neighbors(doc_id, usize::MAX)?;
        let toks = &doc.tokens;
        let mut segments = Vec::new();
        let mut cursor = 0;
        while cursor < toks.len() {
            let rest = &toks[cursor..];
            let cap = rest.len().min(self.config.l_max);
            let hit = (self.config.l_min..=cap)
                .rev()
                .find_map(|len| search_phrase(self.corpus, &rest[..len], &all_others).map(|(d, s)| (len, d, s)));
            match hit {
                Some((len, src, start)) => {
                    segments.push(Segment::Phrase { source_doc: src, start, end: start + len - 1 });
                    cursor += len;
                }
                None => {
                    segments.push(Segment::Token { token: rest[0] });
                    cursor += 1;
                }
            }
        }
        Ok(SegmentedDocument { doc_id, segments })
    }

    pub fn segment_all(&self, exec: Exec) -> Result<Vec<SegmentedDocument>, SegmentError> {
        exec.map_range(self.corpus.len(), |i| self.segment_document(i)).into_iter().collect()
    }
}

fn common_prefix(a: &[TokenId], b: &[TokenId], cap: usize) -> usize {
    a.iter().zip(b).take(cap).take_while(|(x, y)| x == y).count()
}

/// Writes one `{"doc": .., "segments": [..]}` record per line.
pub fn write_segments<W: Write>(mut w: W, docs: &[SegmentedDocument]) -> Result<(), SegmentError> {
    for d in docs {
        let line = serde_json::to_string(d).map_err(|e| SegmentError::Io(e.into()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_segments<R: BufRead>(r: R) -> Result<Vec<SegmentedDocument>, SegmentError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| SegmentError::Malformed { line: i + 1, reason: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn save_segments(path: impl AsRef<Path>, docs: &[SegmentedDocument]) -> Result<(), SegmentError> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_segments(f, docs)
}

pub fn load_segments(path: impl AsRef<Path>) -> Result<Vec<SegmentedDocument>, SegmentError> {
    read_segments(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocabulary;

    fn params_for(c: &Corpus) -> ToyParams {
        ToyParams::seeded(0, c.vocab.len(), 16).unwrap()
    }

    fn cfg(k: usize) -> SegmenterConfig {
        SegmenterConfig { l_min: 2, l_max: 8, k_neighbors: k }
    }

    fn surfaces(c: &Corpus, seg: &Segment) -> String {
        crate::corpus::detokenize(seg.tokens(c).unwrap(), &c.vocab).unwrap()
    }

    #[test]
    fn worked_example() {
        let c = Corpus::from_texts([(0, "the cat sat on the mat"), (1, "the cat ran"), (2, "on the mat he sat")]);
        let p = params_for(&c);
        let seg = Segmenter::new(&c, cfg(16), &p, Exec::Sequential).unwrap();
        let out = seg.segment_document(0).unwrap();
        let sat = c.vocab.id_of("sat").unwrap();
        assert_eq!(
            out.segments,
            vec![
                Segment::Phrase { source_doc: 1, start: 0, end: 1 },
                Segment::Token { token: sat },
                Segment::Phrase { source_doc: 2, start: 0, end: 2 },
            ]
        );
        assert_eq!(surfaces(&c, &out.segments[2]), "on the mat");
        assert_eq!(out, seg.brute_force_segment(0).unwrap());
        out.validate(&c, seg.config()).unwrap();
    }

    #[test]
    fn no_shared_bigram_gives_tokens_only() {
        let c = Corpus::from_texts([(0, "a b c d"), (1, "b a d c"), (2, "x y")]);
        let seg = Segmenter::new(&c, cfg(4), &params_for(&c), Exec::Sequential).unwrap();
        let out = seg.segment_document(0).unwrap();
        assert!(out.segments.iter().all(|s| !s.is_phrase()));
        assert_eq!(out.reconstruct(&c).unwrap(), c.documents[0].tokens);
    }

    #[test]
    fn identical_neighbor_gives_single_phrase() {
        let c = Corpus::from_texts([(0, "p q r s t"), (1, "z z"), (2, "p q r s t")]);
        let seg = Segmenter::new(&c, cfg(4), &params_for(&c), Exec::Sequential).unwrap();
        let out = seg.segment_document(0).unwrap();
        assert_eq!(out.segments, vec![Segment::Phrase { source_doc: 2, start: 0, end: 4 }]);
        assert_eq!(out, seg.brute_force_segment(0).unwrap());
    }

    #[test]
    fn phrases_are_capped_at_l_max() {
        let text = "a b c d e f g h i j k";
        let c = Corpus::from_texts([(0, text), (1, text)]);
        let seg = Segmenter::new(&c, cfg(1), &params_for(&c), Exec::Sequential).unwrap();
        let out = seg.segment_document(0).unwrap();
        assert_eq!(
            out.segments,
            vec![
                Segment::Phrase { source_doc: 1, start: 0, end: 7 },
                Segment::Phrase { source_doc: 1, start: 8, end: 10 },
            ]
        );
    }

    #[test]
    fn neighbor_examples() {
        let c = Corpus::from_texts([(0, "k l m n o"), (1, "o n m l k"), (2, "u v w x y")]);
        let seg = Segmenter::new(&c, cfg(16), &params_for(&c), Exec::Sequential).unwrap();
        assert_eq!(seg.neighbors(0, 1).unwrap(), vec![1]);
        let mut all = seg.neighbors(0, 10).unwrap();
        all.sort();
        assert_eq!(all, vec![1, 2]);

        let single = Corpus::from_texts([(0, "a b")]);
        let seg = Segmenter::new(&single, cfg(16), &params_for(&single), Exec::Sequential).unwrap();
        assert!(seg.neighbors(0, 5).unwrap().is_empty());
        let out = seg.brute_force_segment(0).unwrap();
        assert!(out.segments.iter().all(|s| !s.is_phrase()));
        assert!(matches!(seg.segment_document(3), Err(SegmentError::MissingDocument(3))));
    }

    #[test]
    fn search_phrase_examples() {
        let c = Corpus::from_texts([(0, "the cat ran"), (1, "a b")]);
        let the = c.vocab.id_of("the").unwrap();
        let cat = c.vocab.id_of("cat").unwrap();
        assert_eq!(search_phrase(&c, &[the, cat], &[]), None);
        assert_eq!(search_phrase(&c, &[the, cat], &[1, 0]), Some((0, 0)));
        assert_eq!(search_phrase(&c, &[the, cat, the, cat], &[0, 1]), None);
    }

    #[test]
    fn config_is_validated() {
        assert!(SegmenterConfig { l_min: 0, l_max: 8, k_neighbors: 1 }.validate().is_err());
        assert!(SegmenterConfig { l_min: 3, l_max: 2, k_neighbors: 1 }.validate().is_err());
        assert!(SegmenterConfig { l_min: 1, l_max: 1, k_neighbors: 0 }.validate().is_err());
    }

    #[test]
    fn jsonl_format() {
        let d = SegmentedDocument {
            doc_id: 3,
            segments: vec![Segment::Phrase { source_doc: 1, start: 0, end: 2 }, Segment::Token { token: TokenId(5) }],
        };
        let mut buf = Vec::new();
        write_segments(&mut buf, std::slice::from_ref(&d)).unwrap();
        let line = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            line.trim(),
            r#"{"doc":3,"segments":[{"kind":"phrase","src":1,"s":0,"e":2},{"kind":"token","id":5}]}"#
        );
        assert_eq!(read_segments(&buf[..]).unwrap(), vec![d]);
        assert!(matches!(read_segments("{\"doc\":1}".as_bytes()), Err(SegmentError::Malformed { line: 1, .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn corpus_strategy() -> impl Strategy<Value = Corpus> {
            prop::collection::vec(prop::collection::vec(1u32..6, 1..25), 1..8).prop_map(|docs| {
                let vocab = Vocabulary::from_surfaces((0..6).map(|i| if i == 0 { "<unk>".to_string() } else { format!("w{i}") }).collect()).unwrap();
                let docs = docs.into_iter().map(|d| d.into_iter().map(TokenId).collect()).collect();
                Corpus::from_token_docs(vocab, docs).unwrap()
            })
        }

        proptest! {
            #[test]
            fn reconstruction_maximality_and_oracle(c in corpus_strategy(), l_min in 1usize..4, extra in 0usize..5, k in 1usize..8) {
                let config = SegmenterConfig { l_min, l_max: l_min + extra, k_neighbors: k };
                let p = ToyParams::seeded(7, c.vocab.len(), 8).unwrap();
                let seg = Segmenter::new(&c, config, &p, Exec::Sequential).unwrap();
                for d in 0..c.len() {
                    let out = seg.segment_document(d).unwrap();
                    out.validate(&c, &config).unwrap();
                    // No token segment starts a length-l_min run found in a consulted neighbor.
                    let nbs = seg.neighbors(d, k).unwrap();
                    let toks = &c.documents[d].tokens;
                    let mut pos = 0;
                    for s in &out.segments {
                        if !s.is_phrase() && pos + l_min <= toks.len() {
                            prop_assert!(search_phrase(&c, &toks[pos..pos + l_min], &nbs).is_none());
                        }
                        pos += s.len();
                    }
                    if k + 1 >= c.len() {
                        prop_assert_eq!(&out, &seg.brute_force_segment(d).unwrap());
                    }
                }
            }
        }
    }
}
