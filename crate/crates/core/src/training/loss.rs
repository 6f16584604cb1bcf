//! Phrase and token losses of the toy backend with hand-derived gradients.
//!
//! For a segment starting at position `b > 0` of a training document the
//! query is the contextual vector `c_{b−1}`. A phrase segment `(D^k, s, e)`
//! competes against every span of `D^k` no longer than `l_max` and, unless
//! masked, every vocabulary token; a token segment competes against the
//! vocabulary only. The token loss predicts `x_i` from `c_{i−1}` for `i ≥ 1`.

use crate::corpus::TokenId;
use crate::encoder::ToyParams;
use crate::math::{dot, log_sum_exp, Matrix};
use crate::segmenter::Segment;

use super::{LossConfig, LossReport, TrainError, TrainingBatch};

/// Gradient of the total loss, shaped like the parameters it differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub ToyParams);

impl Gradients {
    pub fn zeros_like(p: &ToyParams) -> Self {
        let mut g = p.clone();
        for t in g.tensors_mut() {
            t.iter_mut().for_each(|x| *x = 0.0);
        }
        Self(g)
    }

    pub fn norm(&self) -> f64 {
        self.0.tensors().iter().flat_map(|t| t.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten(&self.0)
    }
}

pub fn flatten(p: &ToyParams) -> Vec<f64> {
    p.tensors().iter().flat_map(|t| t.iter().copied()).collect()
}

pub fn set_flat(p: &mut ToyParams, flat: &[f64]) {
    let mut at = 0;
    for t in p.tensors_mut() {
        let n = t.len();
        t.copy_from_slice(&flat[at..at + n]);
        at += n;
    }
}

/// Forward pass of one document under the toy encoder.
struct Encoded {
    c: Vec<Vec<f64>>,
    /// `‖u_t‖` before normalisation.
    norms: Vec<f64>,
    start: Vec<Vec<f64>>,
    end: Vec<Vec<f64>>,
}

fn encode(p: &ToyParams, tokens: &[TokenId]) -> Encoded {
    let mut prev = vec![0.0; p.d_t];
    let mut enc = Encoded { c: Vec::new(), norms: Vec::new(), start: Vec::new(), end: Vec::new() };
    for &t in tokens {
        let (c, n) = crate::encoder::contextual_step(p.alpha, p.base.row(t.index()), &prev);
        enc.start.push(p.start_of(&c));
        enc.end.push(p.end_of(&c));
        enc.norms.push(n);
        prev = c.clone();
        enc.c.push(c);
    }
    enc
}

/// `g[e] += Σ_s w[s]·rows[s]`-style rank-one bookkeeping for a source document.
struct RowGrad {
    src: usize,
    start_w: Vec<f64>,
    end_w: Vec<f64>,
    q: Vec<f64>,
}

#[derive(Default)]
struct DocPart {
    lp_terms: Vec<f64>,
    correct: usize,
    lt_sum: f64,
    g_c: Vec<Vec<f64>>,
    rows: Vec<RowGrad>,
    g_table: Option<Matrix>,
}

fn count_terms(batch: &TrainingBatch<'_>, config: &LossConfig) -> (usize, usize) {
    let mut n = 0;
    for sd in batch.segments {
        let mut pos = 0;
        for seg in &sd.segments {
            if pos > 0 && (seg.is_phrase() || config.include_tokens) {
                n += 1;
            }
            pos += seg.len();
        }
    }
    let m = batch.segments.iter().map(|sd| batch.corpus.documents[sd.doc_id].len().saturating_sub(1)).sum();
    (n, m)
}

/// Softmax-minus-onehot scaled by `scale`; returns the term's loss.
pub(super) fn softmax_grad(scores: &[f64], positive: usize, scale: f64, out: &mut Vec<f64>) -> f64 {
    let lse = log_sum_exp(scores);
    out.clear();
    out.extend(scores.iter().map(|s| (s - lse).exp() * scale));
    out[positive] -= scale;
    lse - scores[positive]
}

fn first_argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn document_part(
    p: &ToyParams,
    batch: &TrainingBatch<'_>,
    encoded: &[Encoded],
    sd_index: usize,
    config: &LossConfig,
    n: usize,
    m: usize,
    want_grad: bool,
) -> DocPart {
    let sd = &batch.segments[sd_index];
    let doc = &batch.corpus.documents[sd.doc_id];
    let enc = &encoded[sd.doc_id];
    let (d, h, vocab) = (p.d, p.d / 2, p.vocab_size());
    let table = &p.token_table.0;
    let mut part = DocPart::default();
    if want_grad {
        part.g_c = vec![vec![0.0; p.d_t]; doc.len()];
        part.g_table = Some(Matrix::zeros(vocab, d));
    }
    let inv_n = if n > 0 { 1.0 / n as f64 } else { 0.0 };
    let inv_m = if m > 0 { 1.0 / m as f64 } else { 0.0 };
    let mut scores = Vec::new();
    let mut ds = Vec::new();

    let token_scores = |q: &[f64], scores: &mut Vec<f64>| {
        for w in 0..vocab {
            scores.push(dot(q, table.row(w)));
        }
    };

    let mut pos = 0;
    for seg in &sd.segments {
        let b = pos;
        pos += seg.len();
        if b == 0 {
            continue;
        }
        let q = &enc.c[b - 1];
        scores.clear();
        match *seg {
            Segment::Token { token } => {
                if !config.include_tokens {
                    continue;
                }
                token_scores(q, &mut scores);
                let loss = softmax_grad(&scores, token.index(), inv_n, &mut ds);
                part.lp_terms.push(loss);
                part.correct += usize::from(first_argmax(&scores) == token.index());
                if want_grad {
                    let g_table = part.g_table.as_mut().expect("allocated");
                    for (w, &g) in ds.iter().enumerate() {
                        for (gq, &v) in part.g_c[b - 1].iter_mut().zip(table.row(w)) {
                            *gq += g * v;
                        }
                        for (gv, &x) in g_table.row_mut(w).iter_mut().zip(q) {
                            *gv += g * x;
                        }
                    }
                }
            }
            Segment::Phrase { source_doc, start, end } => {
                let src = &encoded[source_doc];
                let len = src.c.len();
                let (qa, qb) = q.split_at(h);
                let ss: Vec<f64> = src.start.iter().map(|r| dot(qa, r)).collect();
                let ee: Vec<f64> = src.end.iter().map(|r| dot(qb, r)).collect();
                let offset = if config.include_tokens { vocab } else { 0 };
                if config.include_tokens {
                    token_scores(q, &mut scores);
                }
                let mut positive = usize::MAX;
                let mut spans = Vec::new();
                for s in 0..len {
                    for e in s..len.min(s + config.l_max) {
                        if (s, e) == (start, end) {
                            positive = scores.len();
                        }
                        scores.push(ss[s] + ee[e]);
                        spans.push((s, e));
                    }
                }
                let loss = softmax_grad(&scores, positive, inv_n, &mut ds);
                part.lp_terms.push(loss);
                part.correct += usize::from(first_argmax(&scores) == positive);
                if want_grad {
                    let mut start_w = vec![0.0; len];
                    let mut end_w = vec![0.0; len];
                    for (&(s, e), &g) in spans.iter().zip(&ds[offset..]) {
                        start_w[s] += g;
                        end_w[e] += g;
                    }
                    let gq = &mut part.g_c[b - 1];
                    for t in 0..len {
                        for (x, &r) in gq[..h].iter_mut().zip(&src.start[t]) {
                            *x += start_w[t] * r;
                        }
                        for (x, &r) in gq[h..].iter_mut().zip(&src.end[t]) {
                            *x += end_w[t] * r;
                        }
                    }
                    if config.include_tokens {
                        let g_table = part.g_table.as_mut().expect("allocated");
                        for (w, &g) in ds[..vocab].iter().enumerate() {
                            for (gq, &v) in part.g_c[b - 1].iter_mut().zip(table.row(w)) {
                                *gq += g * v;
                            }
                            for (gv, &x) in g_table.row_mut(w).iter_mut().zip(q) {
                                *gv += g * x;
                            }
                        }
                    }
                    part.rows.push(RowGrad { src: source_doc, start_w, end_w, q: q.clone() });
                }
            }
        }
    }

    for i in 1..doc.len() {
        let q = &enc.c[i - 1];
        scores.clear();
        token_scores(q, &mut scores);
        let target = doc.tokens[i].index();
        part.lt_sum += softmax_grad(&scores, target, inv_m, &mut ds);
        if want_grad {
            let g_table = part.g_table.as_mut().expect("allocated");
            for (w, &g) in ds.iter().enumerate() {
                for (gq, &v) in part.g_c[i - 1].iter_mut().zip(table.row(w)) {
                    *gq += g * v;
                }
                for (gv, &x) in g_table.row_mut(w).iter_mut().zip(q) {
                    *gv += g * x;
                }
            }
        }
    }
    part
}

/// Backpropagates row and contextual gradients of one document into `grad`.
fn backprop_document(
    p: &ToyParams,
    tokens: &[TokenId],
    enc: &Encoded,
    mut g_c: Vec<Vec<f64>>,
    g_start: &[Vec<f64>],
    g_end: &[Vec<f64>],
    grad: &mut ToyParams,
) {
    for t in 0..tokens.len() {
        let c = &enc.c[t];
        grad.w_start.add_outer(&g_start[t], c);
        grad.w_end.add_outer(&g_end[t], c);
        for (b, g) in grad.b_start.iter_mut().zip(&g_start[t]) {
            *b += g;
        }
        for (b, g) in grad.b_end.iter_mut().zip(&g_end[t]) {
            *b += g;
        }
        p.w_start.mul_t_vec_acc(&g_start[t], &mut g_c[t]);
        p.w_end.mul_t_vec_acc(&g_end[t], &mut g_c[t]);
    }
    for t in (0..tokens.len()).rev() {
        let c = &enc.c[t];
        let n = enc.norms[t];
        let g = std::mem::take(&mut g_c[t]);
        let g_u: Vec<f64> = if n > 0.0 {
            let cg = dot(c, &g);
            g.iter().zip(c).map(|(gi, ci)| (gi - ci * cg) / n).collect()
        } else {
            g
        };
        for (b, gu) in grad.base.row_mut(tokens[t].index()).iter_mut().zip(&g_u) {
            *b += p.alpha * gu;
        }
        if t > 0 {
            for (gp, gu) in g_c[t - 1].iter_mut().zip(&g_u) {
                *gp += (1.0 - p.alpha) * gu;
            }
        }
    }
}

const CHUNK: usize = 32;

pub(super) fn evaluate(
    p: &ToyParams,
    batch: &TrainingBatch<'_>,
    config: &LossConfig,
    want_grad: bool,
) -> Result<(LossReport, Option<Gradients>), TrainError> {
    batch.validate(p, config)?;
    let corpus = batch.corpus;
    let exec = config.exec;
    let encoded: Vec<Encoded> = exec.map(&corpus.documents, |doc| encode(p, &doc.tokens));
    let (n, m) = count_terms(batch, config);

    let mut report = LossReport::default();
    let mut lt = 0.0;
    let h = p.d / 2;
    let mut g_c: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut g_start: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut g_end: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut grad = Gradients::zeros_like(p);
    if want_grad {
        g_c = corpus.documents.iter().map(|d| vec![vec![0.0; p.d_t]; d.len()]).collect();
        g_start = corpus.documents.iter().map(|d| vec![vec![0.0; h]; d.len()]).collect();
        g_end = g_start.clone();
    }

    let ids: Vec<usize> = (0..batch.segments.len()).collect();
    for chunk in ids.chunks(CHUNK) {
        let parts = exec.map(chunk, |&i| document_part(p, batch, &encoded, i, config, n, m, want_grad));
        for (part, &i) in parts.into_iter().zip(chunk) {
            report.correct += part.correct;
            report.per_segment.extend_from_slice(&part.lp_terms);
            lt += part.lt_sum;
            if !want_grad {
                continue;
            }
            let doc = batch.segments[i].doc_id;
            for (acc, g) in g_c[doc].iter_mut().zip(&part.g_c) {
                acc.iter_mut().zip(g).for_each(|(a, x)| *a += x);
            }
            for r in &part.rows {
                let (qa, qb) = r.q.split_at(h);
                for t in 0..r.start_w.len() {
                    for (a, x) in g_start[r.src][t].iter_mut().zip(qa) {
                        *a += r.start_w[t] * x;
                    }
                    for (a, x) in g_end[r.src][t].iter_mut().zip(qb) {
                        *a += r.end_w[t] * x;
                    }
                }
            }
            if let Some(gt) = &part.g_table {
                grad.0.token_table.0.data.iter_mut().zip(&gt.data).for_each(|(a, x)| *a += x);
            }
        }
    }

    report.phrase_terms = n;
    report.token_terms = m;
    report.l_p = if n > 0 { report.per_segment.iter().sum::<f64>() / n as f64 } else { 0.0 };
    report.l_t = if m > 0 { lt / m as f64 } else { 0.0 };
    report.l = report.l_p + report.l_t;

    if !want_grad {
        return Ok((report, None));
    }
    let docs: Vec<usize> = (0..corpus.len()).collect();
    for chunk in docs.chunks(CHUNK) {
        let parts = exec.map(chunk, |&doc| {
            let mut local = Gradients::zeros_like(p);
            local.0.token_table.0.data.clear();
            backprop_document(p, &corpus.documents[doc].tokens, &encoded[doc], g_c[doc].clone(), &g_start[doc], &g_end[doc], &mut local.0);
            local
        });
        for local in parts {
            let [base, ws, bs, we, be, _] = grad.0.tensors_mut();
            let [lbase, lws, lbs, lwe, lbe, _] = local.0.tensors();
            for (dst, src) in [(base, lbase), (ws, lws), (bs, lbs), (we, lwe), (be, lbe)] {
                dst.iter_mut().zip(src).for_each(|(a, x)| *a += x);
            }
        }
    }
    Ok((report, Some(grad)))
}
