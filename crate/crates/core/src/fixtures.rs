//! Seeded synthetic corpora for tests, benches and the demo pipeline.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, TokenId, Vocabulary, UNK_SURFACE};

fn word_vocab(n: usize, prefix: &str) -> Vocabulary {
    let mut surfaces = vec![UNK_SURFACE.to_string()];
    surfaces.extend((0..n).map(|i| format!("{prefix}{i}")));
    Vocabulary::from_surfaces(surfaces).expect("UNK first, surfaces distinct")
}

/// Up to `max_docs` documents of 1..=`max_len` tokens drawn uniformly from
/// `vocab` words.
pub fn random_corpus(seed: u64, max_docs: usize, max_len: usize, vocab: usize) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_docs = rng.random_range(1..=max_docs);
    random_corpus_with(&mut rng, n_docs, 1, max_len, vocab)
}

fn random_corpus_with(rng: &mut ChaCha8Rng, n_docs: usize, min_len: usize, max_len: usize, vocab: usize) -> Corpus {
    let docs = (0..n_docs)
        .map(|_| {
            let len = rng.random_range(min_len..=max_len);
            (0..len).map(|_| TokenId(rng.random_range(1..=vocab as u32))).collect()
        })
        .collect();
    Corpus::from_token_docs(word_vocab(vocab, "w"), docs).expect("ids within vocabulary")
}

/// Exactly `n_docs` documents of `min_len..=max_len` tokens.
pub fn random_corpus_sized(seed: u64, n_docs: usize, min_len: usize, max_len: usize, vocab: usize) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_corpus_with(&mut rng, n_docs, min_len, max_len, vocab)
}

/// Shape of the overfit corpus: a cycle of `chunks × chunk_len` distinct
/// tokens, cut into documents of `window` consecutive chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainSpec {
    pub chunks: usize,
    pub chunk_len: usize,
    pub window: usize,
    pub docs: usize,
    /// Token offset of the first document's start within the cycle.
    pub offset: usize,
}

impl Default for ChainSpec {
    fn default() -> Self {
        Self { chunks: 10, chunk_len: 8, window: 5, docs: 50, offset: 0 }
    }
}

/// Document `i` covers chunks `i mod chunks .. + window` of the cycle
/// (shifted by `offset` tokens), so every chunk occurs in many documents.
pub fn chain_corpus(spec: ChainSpec) -> Corpus {
    let total = spec.chunks * spec.chunk_len;
    let vocab = word_vocab(total, "t");
    let docs = (0..spec.docs)
        .map(|i| {
            let first = (i % spec.chunks) * spec.chunk_len + spec.offset;
            (0..spec.window * spec.chunk_len).map(|j| TokenId(((first + j) % total) as u32 + 1)).collect()
        })
        .collect();
    Corpus::from_token_docs(vocab, docs).expect("ids within vocabulary")
}

const SUBJECTS: &[&str] = &[
    "the old sailor", "a young engineer", "the village baker", "my neighbour", "the quiet student",
    "a travelling musician", "the city council", "our team leader", "the night guard", "a curious child",
];
const VERBS: &[&str] = &[
    "walked along", "looked at", "wrote about", "talked to", "waited near", "painted", "repaired",
    "described", "carried", "remembered",
];
const OBJECTS: &[&str] = &[
    "the harbour at dawn", "the broken bridge", "a small wooden boat", "the long winter road",
    "the market square", "an empty train station", "the river bank", "a letter from home",
    "the old stone church", "the garden behind the house",
];
const TAILS: &[&str] = &[
    "before the rain started", "while the sun was setting", "for the second time that week",
    "without saying a word", "as everyone had expected", "in the early morning", "after a long day",
    "with great care",
];

/// Sentences assembled from a small phrase inventory, so documents share
/// many multi-word phrases. Returns `(key, text)` pairs.
pub fn demo_texts(seed: u64, n_docs: usize) -> Vec<(i64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|i| {
            let sentences = rng.random_range(3..=6);
            let text = (0..sentences)
                .map(|_| {
                    let s = SUBJECTS.choose(&mut rng).expect("non-empty");
                    let v = VERBS.choose(&mut rng).expect("non-empty");
                    let o = OBJECTS.choose(&mut rng).expect("non-empty");
                    if rng.random_bool(0.5) {
                        let t = TAILS.choose(&mut rng).expect("non-empty");
                        format!("{s} {v} {o} {t}.")
                    } else {
                        format!("{s} {v} {o}.")
                    }
                })
                .collect::<Vec<_>>()
                .join(" ");
            (i as i64, text)
        })
        .collect()
}

/// The bundled demo corpus as JSONL (`{"id", "text"}` per line).
pub fn demo_jsonl(seed: u64, n_docs: usize) -> String {
    let mut out = String::new();
    for (id, text) in demo_texts(seed, n_docs) {
        out.push_str(&serde_json::json!({ "id": id, "text": text }).to_string());
        out.push('\n');
    }
    out
}

pub const DEMO_SEED: u64 = 2023;
pub const DEMO_DOCS: usize = 200;
