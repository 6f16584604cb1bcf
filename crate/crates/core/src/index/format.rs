//! On-disk index layout (all integers and floats little-endian).
//!
//! ```text
//! offset  size  field
//!      0     4  magic "COG1"
//!      4     2  format version (u16)
//!      6     2  reserved
//!      8    20  d, d_t, l_max, |V|, N (u32 each)
//!     28     8  encoder seed (u64)
//!     36     8  encoder fingerprint (u64)
//!     44     8  alpha (f64)
//!     52     4  section count (u32)
//!     56     8  checksum: first 8 bytes of SHA-256 over bytes [0, 56) ++ [64, end)
//!     64  24·n  section table: kind u32, reserved u32, offset u64, length u64
//! ```
//!
//! Sections start on 8-byte boundaries so the `f32` blocks can be mapped
//! directly. The prefix retrieval vector is `MLP_start(mean of prefix
//! contextual vectors)`; document vectors are the mean start row.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::{IndexError, IndexHeader, IndexedDoc, PhraseIndex};
use crate::corpus::{TokenId, Vocabulary};
use crate::encoder::{TokenEmbeddingTable, ToyParams};
use crate::math::Matrix;

pub const MAGIC: &[u8; 4] = b"COG1";
pub const FORMAT_VERSION: u16 = 1;

const HEADER_LEN: usize = 64;
const CHECKSUM_AT: usize = 56;
const SECTION_ENTRY_LEN: usize = 24;

const SEC_VOCAB: u32 = 1;
const SEC_DOCS: u32 = 2;
const SEC_TOKEN_TABLE: u32 = 3;
const SEC_START: u32 = 4;
const SEC_END: u32 = 5;
const SEC_DOC_VECTORS: u32 = 6;
const SEC_TOY_PARAMS: u32 = 7;

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = Sha256::new();
    h.update(&bytes[..CHECKSUM_AT]);
    h.update(&bytes[HEADER_LEN..]);
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn put_u32(buf: &mut Vec<u8>, x: u32) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn put_f32s(buf: &mut Vec<u8>, xs: &[f32]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

/// Serialises the index. Identical indexes give identical bytes.
pub fn encode_index(index: &PhraseIndex) -> Vec<u8> {
    let mut sections: Vec<(u32, Vec<u8>)> = Vec::new();

    let mut vocab = Vec::new();
    put_u32(&mut vocab, index.vocab.len() as u32);
    for s in index.vocab.surfaces() {
        put_u32(&mut vocab, s.len() as u32);
        vocab.extend_from_slice(s.as_bytes());
    }
    sections.push((SEC_VOCAB, vocab));

    let mut docs = Vec::new();
    put_u32(&mut docs, index.docs.len() as u32);
    for d in &index.docs {
        docs.extend_from_slice(&d.key.to_le_bytes());
        put_u32(&mut docs, d.len() as u32);
    }
    for d in &index.docs {
        for t in &d.tokens {
            put_u32(&mut docs, t.0);
        }
    }
    sections.push((SEC_DOCS, docs));

    let mut table = Vec::new();
    put_f32s(&mut table, &index.token_table);
    sections.push((SEC_TOKEN_TABLE, table));

    let mut start = Vec::new();
    let mut end = Vec::new();
    for d in &index.docs {
        put_f32s(&mut start, &d.start);
        put_f32s(&mut end, &d.end);
    }
    sections.push((SEC_START, start));
    sections.push((SEC_END, end));

    let mut dv = Vec::new();
    put_f32s(&mut dv, &index.doc_vectors);
    sections.push((SEC_DOC_VECTORS, dv));

    if let Some(p) = &index.backend {
        let mut buf = Vec::new();
        for t in p.tensors() {
            put_f64s(&mut buf, t);
        }
        sections.push((SEC_TOY_PARAMS, buf));
    }

    let h = &index.header;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    for x in [h.d, h.d_t, h.l_max, index.vocab.len(), index.docs.len()] {
        put_u32(&mut out, x as u32);
    }
    out.extend_from_slice(&h.seed.to_le_bytes());
    out.extend_from_slice(&h.fingerprint.to_le_bytes());
    out.extend_from_slice(&h.alpha.to_le_bytes());
    put_u32(&mut out, sections.len() as u32);
    out.extend_from_slice(&0u64.to_le_bytes());
    debug_assert_eq!(out.len(), HEADER_LEN);

    let table_end = HEADER_LEN + sections.len() * SECTION_ENTRY_LEN;
    let mut offset = table_end.next_multiple_of(8);
    let mut layout = Vec::with_capacity(sections.len());
    for (kind, bytes) in &sections {
        layout.push((*kind, offset, bytes.len()));
        offset = (offset + bytes.len()).next_multiple_of(8);
    }
    for &(kind, off, len) in &layout {
        put_u32(&mut out, kind);
        put_u32(&mut out, 0);
        out.extend_from_slice(&(off as u64).to_le_bytes());
        out.extend_from_slice(&(len as u64).to_le_bytes());
    }
    for ((_, off, _), (_, bytes)) in layout.iter().zip(&sections) {
        out.resize(*off, 0);
        out.extend_from_slice(bytes);
    }
    out.resize(out.len().next_multiple_of(8), 0);

    let sum = checksum(&out);
    out[CHECKSUM_AT..HEADER_LEN].copy_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(e) => {
                let s = &self.buf[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(IndexError::Corrupt(format!("{} section shorter than declared contents", self.what))),
        }
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, IndexError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, IndexError> {
        let b = self.take(n.checked_mul(4).ok_or_else(|| IndexError::Corrupt("size overflow".into()))?)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, IndexError> {
        let b = self.take(n.checked_mul(8).ok_or_else(|| IndexError::Corrupt("size overflow".into()))?)?;
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn finish(&self) -> Result<(), IndexError> {
        if self.pos != self.buf.len() {
            return Err(IndexError::Corrupt(format!("{} section has trailing bytes", self.what)));
        }
        Ok(())
    }
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn le_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

pub fn decode_index(bytes: &[u8]) -> Result<PhraseIndex, IndexError> {
    if bytes.len() < 6 {
        return Err(IndexError::Truncated(format!("{} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(IndexError::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(IndexError::Version { found: version, expected: FORMAT_VERSION });
    }
    if bytes.len() < HEADER_LEN {
        return Err(IndexError::Truncated(format!("{} bytes, header needs {HEADER_LEN}", bytes.len())));
    }
    let d = le_u32(bytes, 8) as usize;
    let d_t = le_u32(bytes, 12) as usize;
    let l_max = le_u32(bytes, 16) as usize;
    let n_vocab = le_u32(bytes, 20) as usize;
    let n_docs = le_u32(bytes, 24) as usize;
    let seed = le_u64(bytes, 28);
    let fingerprint = le_u64(bytes, 36);
    let alpha = f64::from_le_bytes(bytes[44..52].try_into().unwrap());
    let n_sections = le_u32(bytes, 52) as usize;
    let stored = le_u64(bytes, CHECKSUM_AT);

    let table_end = n_sections
        .checked_mul(SECTION_ENTRY_LEN)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| IndexError::Corrupt("section count overflow".into()))?;
    if bytes.len() < table_end {
        return Err(IndexError::Truncated("section table cut short".into()));
    }
    let mut sections = Vec::with_capacity(n_sections);
    for i in 0..n_sections {
        let at = HEADER_LEN + i * SECTION_ENTRY_LEN;
        let kind = le_u32(bytes, at);
        let off = le_u64(bytes, at + 8) as usize;
        let len = le_u64(bytes, at + 16) as usize;
        match off.checked_add(len) {
            Some(end) if end <= bytes.len() => sections.push((kind, &bytes[off..end])),
            _ => return Err(IndexError::Truncated(format!("section {kind} extends past end of file"))),
        }
    }

    let computed = checksum(bytes);
    if computed != stored {
        return Err(IndexError::Checksum { stored, computed });
    }
    if d == 0 || !d.is_multiple_of(2) {
        return Err(IndexError::Corrupt(format!("odd or zero d = {d}")));
    }
    let h = d / 2;
    let section = |kind: u32, what: &'static str| -> Result<Reader<'_>, IndexError> {
        sections
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, b)| Reader::new(b, what))
            .ok_or_else(|| IndexError::Corrupt(format!("missing {what} section")))
    };

    let mut r = section(SEC_VOCAB, "vocabulary")?;
    let count = r.u32()? as usize;
    if count != n_vocab {
        return Err(IndexError::Corrupt(format!("vocabulary holds {count} entries, header says {n_vocab}")));
    }
    let mut surfaces = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let s = std::str::from_utf8(r.take(len)?).map_err(|e| IndexError::Corrupt(e.to_string()))?;
        surfaces.push(s.to_string());
    }
    r.finish()?;
    let vocab = Vocabulary::from_surfaces(surfaces)?;

    let mut r = section(SEC_DOCS, "documents")?;
    if r.u32()? as usize != n_docs {
        return Err(IndexError::Corrupt("document count disagrees with header".into()));
    }
    let mut meta = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        let key = r.i64()?;
        let len = r.u32()? as usize;
        meta.push((key, len));
    }
    let mut token_lists = Vec::with_capacity(n_docs);
    for &(_, len) in &meta {
        let mut toks = Vec::with_capacity(len);
        for _ in 0..len {
            let t = r.u32()?;
            if t as usize >= n_vocab {
                return Err(IndexError::Corrupt(format!("token id {t} outside vocabulary")));
            }
            toks.push(TokenId(t));
        }
        token_lists.push(toks);
    }
    r.finish()?;

    let mut r = section(SEC_TOKEN_TABLE, "token table")?;
    let token_table = r.f32s(n_vocab * d)?;
    r.finish()?;

    let mut rs = section(SEC_START, "start rows")?;
    let mut re = section(SEC_END, "end rows")?;
    let mut docs = Vec::with_capacity(n_docs);
    for ((key, len), tokens) in meta.into_iter().zip(token_lists) {
        docs.push(IndexedDoc { key, tokens, start: rs.f32s(len * h)?, end: re.f32s(len * h)? });
    }
    rs.finish()?;
    re.finish()?;

    let mut r = section(SEC_DOC_VECTORS, "document vectors")?;
    let doc_vectors = r.f32s(n_docs * h)?;
    r.finish()?;

    let backend = match sections.iter().find(|(k, _)| *k == SEC_TOY_PARAMS) {
        None => None,
        Some((_, b)) => {
            let mut r = Reader::new(b, "encoder parameters");
            let base = Matrix::from_vec(n_vocab, d_t, r.f64s(n_vocab * d_t)?);
            let w_start = Matrix::from_vec(h, d_t, r.f64s(h * d_t)?);
            let b_start = r.f64s(h)?;
            let w_end = Matrix::from_vec(h, d_t, r.f64s(h * d_t)?);
            let b_end = r.f64s(h)?;
            let table = TokenEmbeddingTable(Matrix::from_vec(n_vocab, d, r.f64s(n_vocab * d)?));
            r.finish()?;
            let p = ToyParams { seed, alpha, d, d_t, base, w_start, b_start, w_end, b_end, token_table: table };
            p.validate()?;
            if p.fingerprint() != fingerprint {
                return Err(IndexError::Corrupt("embedded encoder parameters do not match the header fingerprint".into()));
            }
            Some(p)
        }
    };

    Ok(PhraseIndex {
        header: IndexHeader { d, d_t, l_max, seed, fingerprint, alpha },
        vocab,
        docs,
        doc_vectors,
        token_table,
        backend,
    })
}

pub fn save_index(index: &PhraseIndex, path: impl AsRef<Path>) -> Result<(), IndexError> {
    std::fs::write(path, encode_index(index))?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<PhraseIndex, IndexError> {
    decode_index(&std::fs::read(path)?)
}
