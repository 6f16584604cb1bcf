//! Prefix and phrase encoders.
//!
//! A backend turns a prefix into a query vector `q` (dimension `d`) and a
//! document into per-token start/end vectors (dimension `d/2` each). A phrase
//! `(s, e)` is represented by `[start[s]; end[e]]`, so one pass over a
//! document yields every span's representation and only per-token rows need
//! storing. Length-1 context-free candidates come from the token table.

mod toy;
#[cfg(feature = "sidecar")]
pub mod sidecar;

pub use toy::{contextual_step, ToyBackend, ToyParams, DEFAULT_ALPHA, DEFAULT_DIM};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TokenId;
use crate::math::Matrix;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("prefix must contain at least one token")]
    EmptyPrefix,
    #[error("token id {0} outside the backend vocabulary")]
    UnknownToken(u32),
    #[error("span ({s}, {e}) invalid for a document of {len} tokens")]
    InvalidSpan { s: usize, e: usize, len: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("sidecar: {0}")]
    Sidecar(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Phrase / prefix representation size; always even.
    pub d: usize,
    /// Contextual token representation size.
    pub d_t: usize,
}

impl Dims {
    #[inline]
    pub fn half(&self) -> usize {
        self.d / 2
    }
}

/// Incremental prefix representation. Values, not handles: appending returns
/// a new state and leaves the old one untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixState {
    pub tokens: Vec<TokenId>,
    /// Query vector of the prefix.
    pub q: Vec<f64>,
    /// Backend-owned running state (the toy backend keeps the sum of
    /// contextual vectors here for mean pooling).
    pub pooled: Vec<f64>,
}

impl PrefixState {
    pub fn empty(dims: Dims) -> Self {
        Self { tokens: Vec::new(), q: vec![0.0; dims.d], pooled: vec![0.0; dims.d_t] }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Start/end rows for every token of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentReps {
    pub start: Matrix,
    pub end: Matrix,
}

impl DocumentReps {
    pub fn len(&self) -> usize {
        self.start.rows
    }

    pub fn is_empty(&self) -> bool {
        self.start.rows == 0
    }

    /// Mean of the start rows, the document's coarse-retrieval vector.
    pub fn mean_start(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.start.cols];
        for r in 0..self.start.rows {
            for (a, x) in acc.iter_mut().zip(self.start.row(r)) {
                *a += x;
            }
        }
        let n = self.start.rows.max(1) as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

/// `[start[s]; end[e]]`.
pub fn phrase_repr(s: usize, e: usize, reps: &DocumentReps) -> Result<Vec<f64>, EncoderError> {
    let len = reps.len();
    if s > e || e >= len {
        return Err(EncoderError::InvalidSpan { s, e, len });
    }
    let mut v = Vec::with_capacity(reps.start.cols + reps.end.cols);
    v.extend_from_slice(reps.start.row(s));
    v.extend_from_slice(reps.end.row(e));
    Ok(v)
}

/// Context-independent token embeddings, one row of width `d` per vocabulary entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEmbeddingTable(pub Matrix);

impl TokenEmbeddingTable {
    pub fn get(&self, w: TokenId) -> Result<&[f64], EncoderError> {
        if w.index() >= self.0.rows {
            return Err(EncoderError::UnknownToken(w.0));
        }
        Ok(self.0.row(w.index()))
    }

    pub fn vocab_size(&self) -> usize {
        self.0.rows
    }

    pub fn dim(&self) -> usize {
        self.0.cols
    }
}

/// The contract every encoder backend satisfies. Implementations are
/// immutable after construction and may be shared across threads.
pub trait EncoderBackend: Send + Sync {
    fn dims(&self) -> Dims;

    fn vocab_size(&self) -> usize;

    /// Identifies the parameters; an index records it and refuses a backend
    /// whose fingerprint differs.
    fn fingerprint(&self) -> u64;

    fn prefix_append(&self, state: &PrefixState, token: TokenId) -> Result<PrefixState, EncoderError>;

    fn prefix_init(&self, tokens: &[TokenId]) -> Result<PrefixState, EncoderError> {
        if tokens.is_empty() {
            return Err(EncoderError::EmptyPrefix);
        }
        let mut state = PrefixState::empty(self.dims());
        for &t in tokens {
            state = self.prefix_append(&state, t)?;
        }
        Ok(state)
    }

    fn encode_document(&self, tokens: &[TokenId]) -> Result<DocumentReps, EncoderError>;

    fn token_table(&self) -> &TokenEmbeddingTable;

    fn token_embedding(&self, w: TokenId) -> Result<&[f64], EncoderError> {
        self.token_table().get(w)
    }

    /// Coarse-retrieval vector for a prefix, comparable with
    /// [`DocumentReps::mean_start`].
    fn prefix_vector(&self, state: &PrefixState) -> Vec<f64>;

    /// Full parameter dump when the backend is self-contained (the toy
    /// backend); external backends return `None`.
    fn toy_params(&self) -> Option<&ToyParams> {
        None
    }
}
