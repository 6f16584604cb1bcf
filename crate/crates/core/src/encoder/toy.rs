use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dims, DocumentReps, EncoderBackend, EncoderError, PrefixState, TokenEmbeddingTable};
use crate::corpus::TokenId;
use crate::math::{dot, Matrix};

pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_DIM: usize = 64;

/// Parameters of the deterministic toy encoder.
///
/// Contextual vectors follow `c_t = normalize(α·e(x_t) + (1−α)·c_{t−1})` with
/// `c_0 = 0`; a zero argument is left unnormalized. The prefix query is the
/// last contextual vector, so `d_t == d`. Start/end rows are affine maps of
/// `c_t` into `d/2` dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyParams {
    pub seed: u64,
    pub alpha: f64,
    pub d: usize,
    pub d_t: usize,
    /// `|V| × d_t` base embeddings `e(w)`.
    pub base: Matrix,
    pub w_start: Matrix,
    pub b_start: Vec<f64>,
    pub w_end: Matrix,
    pub b_end: Vec<f64>,
    /// `|V| × d` context-independent token embeddings.
    pub token_table: TokenEmbeddingTable,
}

impl ToyParams {
    /// Seeded initialisation: base embeddings and the token table uniform in
    /// `[-0.1, 0.1]`, affine weights uniform in `±1/√d_t`, zero biases.
    pub fn seeded(seed: u64, vocab_size: usize, d: usize) -> Result<Self, EncoderError> {
        Self::seeded_with_alpha(seed, vocab_size, d, DEFAULT_ALPHA)
    }

    pub fn seeded_with_alpha(seed: u64, vocab_size: usize, d: usize, alpha: f64) -> Result<Self, EncoderError> {
        if d == 0 || !d.is_multiple_of(2) {
            return Err(EncoderError::InvalidParams(format!("d must be even and positive, got {d}")));
        }
        if vocab_size == 0 {
            return Err(EncoderError::InvalidParams("empty vocabulary".into()));
        }
        let d_t = d;
        let h = d / 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, a: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-a..=a)).collect() };
        let w_scale = 1.0 / (d_t as f64).sqrt();
        let base = Matrix::from_vec(vocab_size, d_t, uniform(vocab_size * d_t, 0.1));
        let w_start = Matrix::from_vec(h, d_t, uniform(h * d_t, w_scale));
        let w_end = Matrix::from_vec(h, d_t, uniform(h * d_t, w_scale));
        let token_table = TokenEmbeddingTable(Matrix::from_vec(vocab_size, d, uniform(vocab_size * d, 0.1)));
        Ok(Self {
            seed,
            alpha,
            d,
            d_t,
            base,
            w_start,
            b_start: vec![0.0; h],
            w_end,
            b_end: vec![0.0; h],
            token_table,
        })
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let h = self.d / 2;
        let v = self.base.rows;
        let bad = |what: &str| Err(EncoderError::InvalidParams(what.to_string()));
        if self.d == 0 || !self.d.is_multiple_of(2) {
            return bad("d must be even and positive");
        }
        if self.d_t != self.d {
            return bad("toy backend requires d_t == d");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha outside [0, 1]");
        }
        if self.base.cols != self.d_t
            || (self.w_start.rows, self.w_start.cols) != (h, self.d_t)
            || (self.w_end.rows, self.w_end.cols) != (h, self.d_t)
            || self.b_start.len() != h
            || self.b_end.len() != h
            || self.token_table.0.rows != v
            || self.token_table.0.cols != self.d
        {
            return bad("parameter shapes disagree with d / d_t / |V|");
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        Dims { d: self.d, d_t: self.d_t }
    }

    pub fn vocab_size(&self) -> usize {
        self.base.rows
    }

    /// Trainable tensors in a fixed order: base, w_start, b_start, w_end, b_end, token table.
    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            &self.base.data,
            &self.w_start.data,
            &self.b_start,
            &self.w_end.data,
            &self.b_end,
            &self.token_table.0.data,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.base.data,
            &mut self.w_start.data,
            &mut self.b_start,
            &mut self.w_end.data,
            &mut self.b_end,
            &mut self.token_table.0.data,
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"cog-toy-v1");
        h.update(self.seed.to_le_bytes());
        h.update(self.alpha.to_le_bytes());
        h.update((self.d as u64).to_le_bytes());
        h.update((self.d_t as u64).to_le_bytes());
        h.update((self.vocab_size() as u64).to_le_bytes());
        for t in self.tensors() {
            for x in t {
                h.update(x.to_le_bytes());
            }
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }

    /// Contextual vectors `c_1..c_m` of a token sequence.
    pub fn contextual(&self, tokens: &[TokenId]) -> Result<Vec<Vec<f64>>, EncoderError> {
        let mut prev = vec![0.0; self.d_t];
        let mut out = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let e = self.base_row(t)?;
            let (c, _) = contextual_step(self.alpha, e, &prev);
            out.push(c.clone());
            prev = c;
        }
        Ok(out)
    }

    /// Mean of the contextual vectors (zero for an empty sequence).
    pub fn mean_contextual(&self, tokens: &[TokenId]) -> Result<Vec<f64>, EncoderError> {
        let cs = self.contextual(tokens)?;
        let mut acc = vec![0.0; self.d_t];
        for c in &cs {
            for (a, x) in acc.iter_mut().zip(c) {
                *a += x;
            }
        }
        if !cs.is_empty() {
            let n = cs.len() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
        }
        Ok(acc)
    }

    pub fn base_row(&self, t: TokenId) -> Result<&[f64], EncoderError> {
        if t.index() >= self.base.rows {
            return Err(EncoderError::UnknownToken(t.0));
        }
        Ok(self.base.row(t.index()))
    }

    pub fn start_of(&self, c: &[f64]) -> Vec<f64> {
        affine(&self.w_start, &self.b_start, c)
    }

    pub fn end_of(&self, c: &[f64]) -> Vec<f64> {
        affine(&self.w_end, &self.b_end, c)
    }
}

fn affine(w: &Matrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = w.mul_vec(x);
    for (yi, bi) in y.iter_mut().zip(b) {
        *yi += bi;
    }
    y
}

/// One step of the contextual recurrence. Returns `c_t` and `‖u_t‖`, where
/// `u_t = α·e + (1−α)·c_{t−1}`.
#[inline]
pub fn contextual_step(alpha: f64, e: &[f64], prev: &[f64]) -> (Vec<f64>, f64) {
    let mut u: Vec<f64> = e.iter().zip(prev).map(|(x, p)| alpha * x + (1.0 - alpha) * p).collect();
    let n = dot(&u, &u).sqrt();
    if n > 0.0 {
        u.iter_mut().for_each(|x| *x /= n);
    }
    (u, n)
}

#[derive(Debug, Clone)]
pub struct ToyBackend {
    params: ToyParams,
    fingerprint: u64,
}

impl ToyBackend {
    pub fn new(params: ToyParams) -> Result<Self, EncoderError> {
        params.validate()?;
        let fingerprint = params.fingerprint();
        Ok(Self { params, fingerprint })
    }

    pub fn seeded(seed: u64, vocab_size: usize, d: usize) -> Result<Self, EncoderError> {
        Self::new(ToyParams::seeded(seed, vocab_size, d)?)
    }

    pub fn params(&self) -> &ToyParams {
        &self.params
    }

    pub fn into_params(self) -> ToyParams {
        self.params
    }
}

impl EncoderBackend for ToyBackend {
    fn dims(&self) -> Dims {
        self.params.dims()
    }

    fn vocab_size(&self) -> usize {
        self.params.vocab_size()
    }

    fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    fn prefix_append(&self, state: &PrefixState, token: TokenId) -> Result<PrefixState, EncoderError> {
        let e = self.params.base_row(token)?;
        let (c, _) = contextual_step(self.params.alpha, e, &state.q);
        let mut tokens = state.tokens.clone();
        tokens.push(token);
        let pooled = state.pooled.iter().zip(&c).map(|(p, x)| p + x).collect();
        Ok(PrefixState { tokens, q: c, pooled })
    }

    fn encode_document(&self, tokens: &[TokenId]) -> Result<DocumentReps, EncoderError> {
        let h = self.params.d / 2;
        let cs = self.params.contextual(tokens)?;
        let mut start = Matrix::zeros(tokens.len(), h);
        let mut end = Matrix::zeros(tokens.len(), h);
        for (i, c) in cs.iter().enumerate() {
            start.row_mut(i).copy_from_slice(&self.params.start_of(c));
            end.row_mut(i).copy_from_slice(&self.params.end_of(c));
        }
        Ok(DocumentReps { start, end })
    }

    fn token_table(&self) -> &TokenEmbeddingTable {
        &self.params.token_table
    }

    fn prefix_vector(&self, state: &PrefixState) -> Vec<f64> {
        let n = state.len().max(1) as f64;
        let mean: Vec<f64> = state.pooled.iter().map(|x| x / n).collect();
        self.params.start_of(&mean)
    }

    fn toy_params(&self) -> Option<&ToyParams> {
        Some(&self.params)
    }
}
