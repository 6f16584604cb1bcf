use proptest::prelude::*;

use super::loss::softmax_grad;
use super::*;
use crate::corpus::{TokenId, Vocabulary};
use crate::fixtures::random_corpus_sized;
use crate::math::Matrix;
use crate::segmenter::{Segmenter, SegmenterConfig};

fn seg_phrase(src: usize, s: usize, e: usize) -> Segment {
    Segment::Phrase { source_doc: src, start: s, end: e }
}

fn seg_token(id: u32) -> Segment {
    Segment::Token { token: TokenId(id) }
}

fn segmented(corpus: &Corpus, params: &ToyParams) -> Vec<SegmentedDocument> {
    let cfg = SegmenterConfig { l_min: 2, l_max: 8, k_neighbors: 16 };
    Segmenter::new(corpus, cfg, params, Exec::Sequential).unwrap().segment_all(Exec::Sequential).unwrap()
}

/// Seeded fixture with small vocabularies so documents share phrases.
fn fixture(seed: u64, docs: usize, d: usize) -> (Corpus, ToyParams, Vec<SegmentedDocument>) {
    let corpus = random_corpus_sized(seed, docs, 5, 10, 4);
    let params = ToyParams::seeded(seed ^ 0x5eed, corpus.vocab.len(), d).unwrap();
    let segs = segmented(&corpus, &params);
    (corpus, params, segs)
}

/// Straight transcription of the loss formulas: explicit contextual
/// recurrence, explicit `[start; end]` vectors and plain exponentials.
fn oracle(p: &ToyParams, corpus: &Corpus, segs: &[SegmentedDocument], l_max: usize, with_tokens: bool) -> (f64, f64) {
    let ctx = |tokens: &[TokenId]| -> Vec<Vec<f64>> {
        let mut prev = vec![0.0; p.d_t];
        let mut out = Vec::new();
        for t in tokens {
            let mut u = vec![0.0; p.d_t];
            for j in 0..p.d_t {
                u[j] = p.alpha * p.base.data[t.index() * p.d_t + j] + (1.0 - p.alpha) * prev[j];
            }
            let len = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            if len > 0.0 {
                for x in &mut u {
                    *x /= len;
                }
            }
            out.push(u.clone());
            prev = u;
        }
        out
    };
    let affine = |w: &Matrix, b: &[f64], c: &[f64]| -> Vec<f64> {
        (0..w.rows).map(|i| b[i] + (0..w.cols).map(|j| w.data[i * w.cols + j] * c[j]).sum::<f64>()).collect()
    };
    let vw = |w: usize| p.token_table.0.data[w * p.d..(w + 1) * p.d].to_vec();
    let dotp = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let vocab = p.vocab_size();

    let mut lp = Vec::new();
    let mut lt = Vec::new();
    for sd in segs {
        let doc = &corpus.documents[sd.doc_id].tokens;
        let c = ctx(doc);
        let mut pos = 0;
        for seg in &sd.segments {
            let b = pos;
            pos += seg.len();
            if b == 0 {
                continue;
            }
            let q = &c[b - 1];
            let mut denom = 0.0;
            let numer;
            match *seg {
                Segment::Token { token } => {
                    if !with_tokens {
                        continue;
                    }
                    for w in 0..vocab {
                        denom += dotp(q, &vw(w)).exp();
                    }
                    numer = dotp(q, &vw(token.index())).exp();
                }
                Segment::Phrase { source_doc, start, end } => {
                    let src = &corpus.documents[source_doc].tokens;
                    let cs = ctx(src);
                    let phrase = |s: usize, e: usize| {
                        let mut v = affine(&p.w_start, &p.b_start, &cs[s]);
                        v.extend(affine(&p.w_end, &p.b_end, &cs[e]));
                        v
                    };
                    for s in 0..src.len() {
                        for e in s..src.len() {
                            if e - s < l_max {
                                denom += dotp(q, &phrase(s, e)).exp();
                            }
                        }
                    }
                    if with_tokens {
                        for w in 0..vocab {
                            denom += dotp(q, &vw(w)).exp();
                        }
                    }
                    numer = dotp(q, &phrase(start, end)).exp();
                }
            }
            lp.push(-(numer / denom).ln());
        }
        for i in 1..doc.len() {
            let q = &c[i - 1];
            let denom: f64 = (0..vocab).map(|w| dotp(q, &vw(w)).exp()).sum();
            lt.push(-(dotp(q, &vw(doc[i].index())).exp() / denom).ln());
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    (mean(&lp), mean(&lt))
}

fn cfg(include_tokens: bool) -> LossConfig {
    LossConfig { l_max: 8, include_tokens, exec: Exec::Sequential }
}

#[test]
fn single_candidate_gives_zero_phrase_loss() {
    let corpus = Corpus::from_texts([(0, "y x"), (1, "x")]);
    let params = ToyParams::seeded(1, corpus.vocab.len(), 8).unwrap();
    let segs = vec![SegmentedDocument { doc_id: 0, segments: vec![seg_token(1), seg_phrase(1, 0, 0)] }];
    let r = total_loss(&TrainingBatch::new(&corpus, &segs), &params, &cfg(false)).unwrap();
    assert_eq!(r.phrase_terms, 1);
    assert_eq!(r.l_p, 0.0);
    assert_eq!(r.accuracy(), 1.0);
}

#[test]
fn two_tied_candidates_give_log_two() {
    // "x x": both positions share one contextual direction, so spans (0,0)
    // and (1,1) score the same under l_max = 1.
    let corpus = Corpus::from_texts([(0, "y x"), (1, "x x")]);
    let params = ToyParams::seeded(2, corpus.vocab.len(), 8).unwrap();
    let segs = vec![SegmentedDocument { doc_id: 0, segments: vec![seg_token(1), seg_phrase(1, 0, 0)] }];
    let config = LossConfig { l_max: 1, ..cfg(false) };
    let r = total_loss(&TrainingBatch::new(&corpus, &segs), &params, &config).unwrap();
    assert!((r.l_p - std::f64::consts::LN_2).abs() < 1e-12, "{}", r.l_p);
}

#[test]
fn uniform_logits_give_log_vocab() {
    let corpus = Corpus::from_texts([(0, "a b c a"), (1, "c b")]);
    let mut params = ToyParams::seeded(3, corpus.vocab.len(), 8).unwrap();
    params.token_table.0.data.iter_mut().for_each(|x| *x = 0.0);
    let segs: Vec<_> = (0..2)
        .map(|i| SegmentedDocument {
            doc_id: i,
            segments: corpus.documents[i].tokens.iter().map(|t| Segment::Token { token: *t }).collect(),
        })
        .collect();
    let r = total_loss(&TrainingBatch::new(&corpus, &segs), &params, &cfg(true)).unwrap();
    let log_v = (corpus.vocab.len() as f64).ln();
    assert!((r.l_t - log_v).abs() < 1e-12);
    assert!((r.l_p - log_v).abs() < 1e-12);

    let single = Vocabulary::from_surfaces(vec!["<unk>".into()]).unwrap();
    let c1 = Corpus::from_token_docs(single, vec![vec![TokenId::UNK; 3]]).unwrap();
    let p1 = ToyParams::seeded(4, 1, 4).unwrap();
    let s1 = vec![SegmentedDocument { doc_id: 0, segments: vec![seg_token(0); 3] }];
    let r1 = total_loss(&TrainingBatch::new(&c1, &s1), &p1, &cfg(true)).unwrap();
    assert_eq!((r1.l_t, r1.l_p, r1.l), (0.0, 0.0, 0.0));
}

#[test]
fn matches_formula_oracle() {
    for seed in 0..4 {
        let (corpus, params, segs) = fixture(seed, 3, 8);
        assert!(segs.iter().flat_map(|s| &s.segments).any(Segment::is_phrase));
        for with_tokens in [true, false] {
            let r = total_loss(&TrainingBatch::new(&corpus, &segs), &params, &cfg(with_tokens)).unwrap();
            let (lp, lt) = oracle(&params, &corpus, &segs, 8, with_tokens);
            assert!((r.l_p - lp).abs() < 1e-12, "seed {seed}: {} vs {lp}", r.l_p);
            assert!((r.l_t - lt).abs() < 1e-12, "seed {seed}: {} vs {lt}", r.l_t);
            assert!((r.l - (lp + lt)).abs() < 1e-12);
            assert_eq!(r.l.to_bits(), (r.l_p + r.l_t).to_bits());
        }
    }
}

#[test]
fn invalid_batches_are_rejected() {
    let corpus = Corpus::from_texts([(0, "a b c"), (1, "a b c")]);
    let params = ToyParams::seeded(1, corpus.vocab.len(), 4).unwrap();
    let wrong = vec![SegmentedDocument { doc_id: 0, segments: vec![seg_phrase(1, 0, 1)] }];
    assert!(matches!(total_loss(&TrainingBatch::new(&corpus, &wrong), &params, &cfg(true)), Err(TrainError::InvalidBatch(_))));
    let long = vec![SegmentedDocument { doc_id: 0, segments: vec![seg_phrase(1, 0, 2)] }];
    let short = LossConfig { l_max: 2, ..cfg(true) };
    assert!(total_loss(&TrainingBatch::new(&corpus, &long), &params, &short).is_err());
    let missing = vec![SegmentedDocument { doc_id: 0, segments: vec![seg_phrase(7, 0, 2)] }];
    assert!(total_loss(&TrainingBatch::new(&corpus, &missing), &params, &cfg(true)).is_err());
}

#[test]
fn gradient_matches_finite_differences() {
    for seed in 0..3 {
        let (corpus, params, segs) = fixture(100 + seed, 3 + seed as usize, 8);
        let batch = TrainingBatch::new(&corpus, &segs);
        let check = finite_diff_check(&batch, &params, &cfg(true), 1e-5).unwrap();
        assert!(check.max_rel_error < 1e-6, "seed {seed}: {check:?}");
    }
}

#[test]
fn unused_parameters_have_zero_gradient() {
    // UNK never occurs, so its base row cannot move the loss.
    let (corpus, params, segs) = fixture(7, 3, 8);
    let (_, g) = loss_and_gradient(&TrainingBatch::new(&corpus, &segs), &params, &cfg(true)).unwrap();
    assert!(g.0.base.row(0).iter().all(|&x| x == 0.0));
    let check = finite_diff_check(&TrainingBatch::new(&corpus, &segs), &params, &cfg(true), 1e-5).unwrap();
    assert!(check.max_rel_error < 1e-6);
}

#[test]
fn quadratic_objective_is_checked_exactly() {
    let a = [0.5, 2.0, -1.5, 3.0, 0.25];
    let b = [1.0, -2.0, 0.0, 0.5, 4.0];
    let x = [0.3, -1.2, 2.2, 0.0, -0.7];
    let f = |v: &[f64]| v.iter().zip(a.iter().zip(&b)).map(|(x, (a, b))| a * x * x + b * x).sum::<f64>();
    let g: Vec<f64> = x.iter().zip(a.iter().zip(&b)).map(|(x, (a, b))| 2.0 * a * x + b).collect();
    assert!(max_relative_error(f, &x, &g, 1e-4).max_rel_error < 1e-10);
}

#[test]
fn parallel_and_sequential_agree_bitwise() {
    let (corpus, params, segs) = fixture(11, 5, 8);
    let batch = TrainingBatch::new(&corpus, &segs);
    let (rs, gs) = loss_and_gradient(&batch, &params, &cfg(true)).unwrap();
    let par = LossConfig { exec: Exec::Parallel, ..cfg(true) };
    let (rp, gp) = loss_and_gradient(&batch, &params, &par).unwrap();
    assert_eq!(rs, rp);
    assert_eq!(gs, gp);
}

#[test]
fn zero_steps_leave_parameters_unchanged() {
    let (corpus, params, segs) = fixture(5, 3, 8);
    let config = TrainConfig { steps: 0, d: 8, seed: 5 ^ 0x5eed, ..Default::default() };
    let out = train_toy(&corpus, &segs, &config, Some(params.clone())).unwrap();
    assert_eq!(out.params, params);
    assert_eq!(out.log.len(), 1);
}

#[test]
fn loss_does_not_increase_early() {
    let (corpus, _, segs) = fixture(21, 4, 8);
    let config = TrainConfig { steps: 10, lr: 1e-2, d: 8, seed: 21, ..Default::default() };
    let out = train_toy(&corpus, &segs, &config, None).unwrap();
    for w in out.log.windows(2) {
        assert!(w[1].l <= w[0].l, "{:?}", out.log);
    }
    let mut buf = Vec::new();
    out.write_log(&mut buf).unwrap();
    let first: serde_json::Value = serde_json::from_slice(buf.split(|&b| b == b'\n').next().unwrap()).unwrap();
    for k in ["step", "L", "L_p", "L_t", "acc"] {
        assert!(first.get(k).is_some(), "missing {k}");
    }
}

#[test]
fn training_is_deterministic() {
    let (corpus, _, segs) = fixture(8, 3, 8);
    let config = TrainConfig { steps: 5, lr: 0.1, d: 8, seed: 1, ..Default::default() };
    let a = train_toy(&corpus, &segs, &config, None).unwrap();
    let b = train_toy(&corpus, &segs, &config, None).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.log, b.log);
}

#[test]
fn non_finite_loss_aborts() {
    let (corpus, params, segs) = fixture(9, 3, 8);
    let mut poisoned = params.clone();
    poisoned.w_end.data[0] = f64::NAN;
    let config = TrainConfig { steps: 5, d: 8, ..Default::default() };
    match train_toy(&corpus, &segs, &config, Some(poisoned)) {
        Err(TrainError::Diverged { step, .. }) => assert_eq!(step, 0),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.log.len())),
    }
}

#[test]
fn huge_steps_stay_finite() {
    // Normalised contextual vectors bound the scores' growth; the clipped
    // update keeps the loss finite even with an absurd learning rate.
    let (corpus, _, segs) = fixture(9, 3, 8);
    let config = TrainConfig { steps: 20, lr: 1e6, d: 8, seed: 2, ..Default::default() };
    let out = train_toy(&corpus, &segs, &config, None).unwrap();
    assert!(out.log.iter().all(|e| e.l.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn losses_are_non_negative(seed in 0u64..10_000, docs in 2usize..5) {
        let (corpus, params, segs) = fixture(seed, docs, 4);
        let r = total_loss(&TrainingBatch::new(&corpus, &segs), &params, &cfg(true)).unwrap();
        prop_assert!(r.l_p >= 0.0 && r.l_t >= 0.0);
        prop_assert!(r.per_segment.iter().all(|&x| x >= 0.0));
        prop_assert_eq!(r.l, r.l_p + r.l_t);
    }

    #[test]
    fn term_is_shift_invariant(scores in prop::collection::vec(-10.0f64..10.0, 1..30), shift in -100.0f64..100.0, pick in 0usize..30) {
        let pos = pick % scores.len();
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let mut g = Vec::new();
        let a = softmax_grad(&scores, pos, 1.0, &mut g);
        let b = softmax_grad(&shifted, pos, 1.0, &mut g);
        prop_assert!((a - b).abs() < 1e-9);
    }
}
