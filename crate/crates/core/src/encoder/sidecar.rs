//! Client for an external encoder service speaking JSON over HTTP/1.1.
//!
//! `POST /encode` with `{"kind": "document" | "prefix", "tokens": [..]}`
//! answers `{"d", "d_t", "start", "end", "fingerprint"}` for documents and
//! `{"q", "fingerprint"}` for prefixes. `GET /health` answers
//! `{"status", "fingerprint"}`. The service owns the start/end projections,
//! so the wire carries final `d/2`-wide halves. The service is stateless:
//! appending to a prefix re-encodes the whole token list.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dims, DocumentReps, EncoderBackend, EncoderError, PrefixState, TokenEmbeddingTable};
use crate::corpus::{TokenId, Vocabulary};
use crate::math::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodeKind {
    Document,
    Prefix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeRequest {
    pub kind: EncodeKind,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<Vec<f32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<Vec<Vec<f32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub fingerprint: String,
}

pub struct SidecarBackend {
    base_url: String,
    vocab: Vocabulary,
    dims: Dims,
    model_fingerprint: String,
    fingerprint: u64,
    token_table: TokenEmbeddingTable,
}

fn sidecar_err(e: impl std::fmt::Display) -> EncoderError {
    EncoderError::Sidecar(e.to_string())
}

impl SidecarBackend {
    /// Checks `/health`, probes the dimensions with a one-token document and
    /// pairs the service with a local token table of width `d`.
    pub fn connect(base_url: &str, vocab: Vocabulary, token_table: TokenEmbeddingTable) -> Result<Self, EncoderError> {
        let base_url = base_url.trim_end_matches('/').to_string();
        let health: HealthResponse = ureq::get(format!("{base_url}/health"))
            .call()
            .map_err(sidecar_err)?
            .body_mut()
            .read_json()
            .map_err(sidecar_err)?;
        if token_table.vocab_size() != vocab.len() {
            return Err(EncoderError::Dimension("token table rows differ from vocabulary size".into()));
        }
        let mut backend = Self {
            base_url,
            vocab,
            dims: Dims { d: token_table.dim(), d_t: token_table.dim() },
            model_fingerprint: health.fingerprint,
            fingerprint: 0,
            token_table,
        };
        let probe = backend.request(EncodeKind::Document, &[TokenId::UNK])?;
        let (d, d_t) = match (probe.d, probe.d_t) {
            (Some(d), Some(d_t)) => (d, d_t),
            _ => return Err(EncoderError::Sidecar("document response lacks d / d_t".into())),
        };
        if d % 2 != 0 || d != backend.token_table.dim() {
            return Err(EncoderError::Dimension(format!(
                "service d = {d}, token table width = {}",
                backend.token_table.dim()
            )));
        }
        backend.dims = Dims { d, d_t };
        backend.fingerprint = backend.compute_fingerprint();
        Ok(backend)
    }

    pub fn model_fingerprint(&self) -> &str {
        &self.model_fingerprint
    }

    fn compute_fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"cog-sidecar-v1");
        h.update(self.model_fingerprint.as_bytes());
        h.update((self.dims.d as u64).to_le_bytes());
        for x in &self.token_table.0.data {
            h.update(x.to_le_bytes());
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }

    fn request(&self, kind: EncodeKind, tokens: &[TokenId]) -> Result<EncodeResponse, EncoderError> {
        let tokens = tokens
            .iter()
            .map(|&t| self.vocab.surface(t).map(str::to_string).ok_or(EncoderError::UnknownToken(t.0)))
            .collect::<Result<Vec<_>, _>>()?;
        let req = EncodeRequest { kind, tokens };
        let resp: EncodeResponse = ureq::post(format!("{}/encode", self.base_url))
            .send_json(&req)
            .map_err(sidecar_err)?
            .body_mut()
            .read_json()
            .map_err(sidecar_err)?;
        if self.fingerprint != 0 && resp.fingerprint != self.model_fingerprint {
            return Err(EncoderError::Sidecar(format!(
                "model fingerprint changed from {} to {}",
                self.model_fingerprint, resp.fingerprint
            )));
        }
        Ok(resp)
    }
}

fn rows_to_matrix(rows: Vec<Vec<f32>>, expect_rows: usize, cols: usize) -> Result<Matrix, EncoderError> {
    if rows.len() != expect_rows {
        return Err(EncoderError::Dimension(format!("{} rows for {expect_rows} tokens", rows.len())));
    }
    let mut data = Vec::with_capacity(expect_rows * cols);
    for r in rows {
        if r.len() != cols {
            return Err(EncoderError::Dimension(format!("row width {} != {cols}", r.len())));
        }
        data.extend(r.into_iter().map(f64::from));
    }
    Ok(Matrix::from_vec(expect_rows, cols, data))
}

impl EncoderBackend for SidecarBackend {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    fn prefix_append(&self, state: &PrefixState, token: TokenId) -> Result<PrefixState, EncoderError> {
        let mut tokens = state.tokens.clone();
        tokens.push(token);
        let resp = self.request(EncodeKind::Prefix, &tokens)?;
        let q = resp.q.ok_or_else(|| EncoderError::Sidecar("prefix response lacks q".into()))?;
        if q.len() != self.dims.d {
            return Err(EncoderError::Dimension(format!("q has {} entries, expected {}", q.len(), self.dims.d)));
        }
        Ok(PrefixState { tokens, q: q.into_iter().map(f64::from).collect(), pooled: Vec::new() })
    }

    fn encode_document(&self, tokens: &[TokenId]) -> Result<DocumentReps, EncoderError> {
        let resp = self.request(EncodeKind::Document, tokens)?;
        let h = self.dims.half();
        let start = rows_to_matrix(resp.start.unwrap_or_default(), tokens.len(), h)?;
        let end = rows_to_matrix(resp.end.unwrap_or_default(), tokens.len(), h)?;
        Ok(DocumentReps { start, end })
    }

    fn token_table(&self) -> &TokenEmbeddingTable {
        &self.token_table
    }

    /// The first half of `q`, living in the same space as start rows.
    fn prefix_vector(&self, state: &PrefixState) -> Vec<f64> {
        state.q[..self.dims.half()].to_vec()
    }
}
