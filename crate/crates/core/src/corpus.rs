//! Documents, vocabulary and the deterministic word-level tokenizer.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Surface form of the reserved unknown-token id 0.
pub const UNK_SURFACE: &str = "<unk>";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate document id {id}")]
    DuplicateId { line: usize, id: i64 },
    #[error("unknown token id {0}")]
    UnknownToken(u32),
    #[error("document {0} not in corpus")]
    MissingDocument(usize),
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub const UNK: TokenId = TokenId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Bijective id ↔ surface table. Id 0 is always [`UNK_SURFACE`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    surfaces: Vec<String>,
    lookup: HashMap<String, TokenId>,
    frozen: bool,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut lookup = HashMap::new();
        lookup.insert(UNK_SURFACE.to_string(), TokenId::UNK);
        Self { surfaces: vec![UNK_SURFACE.to_string()], lookup, frozen: false }
    }

    /// Rebuilds a vocabulary from its id-ordered surfaces. The result is frozen.
    pub fn from_surfaces(surfaces: Vec<String>) -> Result<Self, CorpusError> {
        if surfaces.first().map(String::as_str) != Some(UNK_SURFACE) {
            return Err(CorpusError::InvalidVocabulary(format!("id 0 must be {UNK_SURFACE}")));
        }
        let mut lookup = HashMap::with_capacity(surfaces.len());
        for (i, s) in surfaces.iter().enumerate() {
            if lookup.insert(s.clone(), TokenId(i as u32)).is_some() {
                return Err(CorpusError::InvalidVocabulary(format!("duplicate surface {s:?}")));
            }
        }
        Ok(Self { surfaces, lookup, frozen: true })
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn id_of(&self, surface: &str) -> Option<TokenId> {
        self.lookup.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.surfaces.get(id.index()).map(String::as_str)
    }

    pub fn surfaces(&self) -> &[String] {
        &self.surfaces
    }

    /// Id for `surface`, adding it when mutable and mapping it to UNK when frozen.
    pub fn intern(&mut self, surface: &str) -> TokenId {
        if let Some(id) = self.lookup.get(surface) {
            return *id;
        }
        if self.frozen {
            return TokenId::UNK;
        }
        let id = TokenId(self.surfaces.len() as u32);
        self.surfaces.push(surface.to_string());
        self.lookup.insert(surface.to_string(), id);
        id
    }

    pub fn contains(&self, id: TokenId) -> bool {
        id.index() < self.surfaces.len()
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.surfaces.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let surfaces = Vec::<String>::deserialize(d)?;
        Vocabulary::from_surfaces(surfaces).map_err(serde::de::Error::custom)
    }
}

/// Splits `text` into surface strings: Unicode-whitespace separated chunks,
/// with every ASCII punctuation character broken out as its own token.
pub fn split_surfaces(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word_start = None;
        for (i, ch) in chunk.char_indices() {
            if ch.is_ascii_punctuation() {
                if let Some(s) = word_start.take() {
                    out.push(&chunk[s..i]);
                }
                out.push(&chunk[i..i + 1]);
            } else if word_start.is_none() {
                word_start = Some(i);
            }
        }
        if let Some(s) = word_start {
            out.push(&chunk[s..]);
        }
    }
    out
}

pub fn tokenize(text: &str, vocab: &mut Vocabulary) -> Vec<TokenId> {
    split_surfaces(text).into_iter().map(|s| vocab.intern(s)).collect()
}

/// Tokenizes against a vocabulary that is never extended; unseen surfaces become UNK.
pub fn tokenize_frozen(text: &str, vocab: &Vocabulary) -> Vec<TokenId> {
    split_surfaces(text)
        .into_iter()
        .map(|s| vocab.id_of(s).unwrap_or(TokenId::UNK))
        .collect()
}

/// Joins surfaces with single spaces. Punctuation is not re-attached, so this
/// only inverts [`tokenize`] at the token level.
pub fn detokenize(tokens: &[TokenId], vocab: &Vocabulary) -> Result<String, CorpusError> {
    let mut out = String::new();
    for (i, &t) in tokens.iter().enumerate() {
        let s = vocab.surface(t).ok_or(CorpusError::UnknownToken(t.0))?;
        if i > 0 {
            out.push(' ');
        }
        out.push_str(s);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    /// Dense position in the corpus.
    pub id: usize,
    /// The `id` field of the source record.
    pub key: i64,
    pub text: String,
    pub tokens: Vec<TokenId>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub documents: Vec<Document>,
}

#[derive(Deserialize)]
struct Record {
    id: i64,
    text: String,
}

impl Corpus {
    /// Builds a corpus from `(key, text)` pairs, growing a fresh vocabulary.
    pub fn from_texts<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = (i64, S)>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary::new();
        let documents = texts
            .into_iter()
            .enumerate()
            .map(|(id, (key, text))| {
                let text = text.into();
                let tokens = tokenize(&text, &mut vocab);
                Document { id, key, text, tokens }
            })
            .collect();
        vocab.freeze();
        Self { vocab, documents }
    }

    /// Builds a corpus directly from token-id sequences (used by fixtures).
    /// Surfaces are rendered from `vocab`.
    pub fn from_token_docs(vocab: Vocabulary, docs: Vec<Vec<TokenId>>) -> Result<Self, CorpusError> {
        let documents = docs
            .into_iter()
            .enumerate()
            .map(|(id, tokens)| {
                let text = detokenize(&tokens, &vocab)?;
                Ok(Document { id, key: id as i64, text, tokens })
            })
            .collect::<Result<Vec<_>, CorpusError>>()?;
        Ok(Self { vocab: vocab.frozen(), documents })
    }

    /// Reads the line-delimited `{"id": int, "text": string}` format.
    /// Blank lines are skipped; ids must be unique.
    pub fn ingest<R: BufRead>(reader: R) -> Result<Self, CorpusError> {
        let mut vocab = Vocabulary::new();
        let mut seen = HashSet::new();
        let mut documents = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)
                .map_err(|e| CorpusError::Malformed { line: line_no, reason: e.to_string() })?;
            if !seen.insert(rec.id) {
                return Err(CorpusError::DuplicateId { line: line_no, id: rec.id });
            }
            let tokens = tokenize(&rec.text, &mut vocab);
            documents.push(Document { id: documents.len(), key: rec.id, text: rec.text, tokens });
        }
        vocab.freeze();
        Ok(Self { vocab, documents })
    }

    pub fn ingest_path(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let f = std::fs::File::open(path)?;
        Self::ingest(std::io::BufReader::new(f))
    }

    /// Re-tokenizes every document's text against a frozen vocabulary, e.g. the
    /// vocabulary a model was trained with.
    pub fn retokenize(&self, vocab: &Vocabulary) -> Self {
        let documents = self
            .documents
            .iter()
            .map(|d| Document {
                id: d.id,
                key: d.key,
                text: d.text.clone(),
                tokens: tokenize_frozen(&d.text, vocab),
            })
            .collect();
        Self { vocab: vocab.clone().frozen(), documents }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn doc(&self, id: usize) -> Result<&Document, CorpusError> {
        self.documents.get(id).ok_or(CorpusError::MissingDocument(id))
    }

    pub fn total_tokens(&self) -> usize {
        self.documents.iter().map(Document::len).sum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let corpus: Corpus = serde_json::from_reader(f)?;
        corpus.validate()?;
        Ok(corpus)
    }

    fn validate(&self) -> Result<(), CorpusError> {
        for (i, d) in self.documents.iter().enumerate() {
            if d.id != i {
                return Err(CorpusError::InvalidVocabulary(format!("document ids not dense at {i}")));
            }
            if let Some(t) = d.tokens.iter().find(|t| !self.vocab.contains(**t)) {
                return Err(CorpusError::UnknownToken(t.0));
            }
        }
        Ok(())
    }
}
