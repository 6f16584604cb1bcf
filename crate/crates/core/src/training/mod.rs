//! Fitting the toy encoder: phrase loss, token loss, gradient checking and
//! a plain gradient-descent loop.

mod gradcheck;
mod loss;

pub use gradcheck::{finite_diff_check, max_relative_error, GradCheck};
pub use loss::{flatten, set_flat, Gradients};

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::encoder::{EncoderError, ToyParams};
use crate::par::Exec;
use crate::segmenter::{Segment, SegmentedDocument};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training batch: {0}")]
    InvalidBatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite at step {step}")]
    Diverged { step: usize, last_good: Box<ToyParams> },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Longest span in a phrase segment's candidate set.
    pub l_max: usize,
    /// Whether vocabulary tokens join the phrase loss denominators. When
    /// off, token segments contribute nothing to the phrase loss.
    pub include_tokens: bool,
    pub exec: Exec,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { l_max: 8, include_tokens: true, exec: Exec::default() }
    }
}

/// Segmented documents together with the corpus their references resolve into.
#[derive(Debug, Clone, Copy)]
pub struct TrainingBatch<'a> {
    pub corpus: &'a Corpus,
    pub segments: &'a [SegmentedDocument],
}

impl<'a> TrainingBatch<'a> {
    pub fn new(corpus: &'a Corpus, segments: &'a [SegmentedDocument]) -> Self {
        Self { corpus, segments }
    }

    pub fn validate(&self, p: &ToyParams, config: &LossConfig) -> Result<(), TrainError> {
        p.validate()?;
        let bad = |m: String| Err(TrainError::InvalidBatch(m));
        if p.vocab_size() != self.corpus.vocab.len() {
            return bad(format!("parameters cover {} tokens, corpus vocabulary {}", p.vocab_size(), self.corpus.vocab.len()));
        }
        if config.l_max == 0 {
            return Err(TrainError::InvalidConfig("l_max must be positive".into()));
        }
        for sd in self.segments {
            let doc = match self.corpus.documents.get(sd.doc_id) {
                Some(d) => d,
                None => return bad(format!("document {} not in corpus", sd.doc_id)),
            };
            let rebuilt = sd.reconstruct(self.corpus).map_err(|e| TrainError::InvalidBatch(e.to_string()))?;
            if rebuilt != doc.tokens {
                return bad(format!("segments of document {} do not reconstruct it", sd.doc_id));
            }
            for seg in &sd.segments {
                if let Segment::Phrase { start, end, .. } = seg {
                    if end - start + 1 > config.l_max {
                        return bad(format!("phrase ({start}, {end}) longer than l_max = {}", config.l_max));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l_p: f64,
    pub l_t: f64,
    /// Always `l_p + l_t`.
    pub l: f64,
    /// Phrase-loss terms, one per counted segment in batch order.
    pub per_segment: Vec<f64>,
    pub phrase_terms: usize,
    pub token_terms: usize,
    /// Counted segments whose positive is the top-scoring candidate.
    pub correct: usize,
}

impl LossReport {
    /// Next-phrase top-1 accuracy.
    pub fn accuracy(&self) -> f64 {
        if self.phrase_terms == 0 {
            0.0
        } else {
            self.correct as f64 / self.phrase_terms as f64
        }
    }
}

pub fn total_loss(batch: &TrainingBatch<'_>, params: &ToyParams, config: &LossConfig) -> Result<LossReport, TrainError> {
    Ok(loss::evaluate(params, batch, config, false)?.0)
}

pub fn loss_and_gradient(
    batch: &TrainingBatch<'_>,
    params: &ToyParams,
    config: &LossConfig,
) -> Result<(LossReport, Gradients), TrainError> {
    let (r, g) = loss::evaluate(params, batch, config, true)?;
    Ok((r, g.expect("requested")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub d: usize,
    /// Global gradient-norm clipping threshold.
    pub clip: f64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 2000, lr: 0.5, seed: 0, d: crate::encoder::DEFAULT_DIM, clip: 1.0, loss: LossConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: usize,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "L_p")]
    pub l_p: f64,
    #[serde(rename = "L_t")]
    pub l_t: f64,
    pub acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ToyParams,
    /// Loss before each update, plus one final entry after the last step.
    pub log: Vec<TrainLogEntry>,
}

impl TrainOutcome {
    pub fn final_entry(&self) -> &TrainLogEntry {
        self.log.last().expect("log always holds the final evaluation")
    }

    pub fn write_log<W: Write>(&self, mut w: W) -> Result<(), TrainError> {
        for e in &self.log {
            serde_json::to_writer(&mut w, e).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Full-batch gradient descent with global norm clipping, starting from
/// seeded parameters (or `init`).
pub fn train_toy(
    corpus: &Corpus,
    segments: &[SegmentedDocument],
    config: &TrainConfig,
    init: Option<ToyParams>,
) -> Result<TrainOutcome, TrainError> {
    if !(config.lr.is_finite() && config.lr >= 0.0) || config.clip.is_nan() || config.clip <= 0.0 {
        return Err(TrainError::InvalidConfig(format!("lr = {}, clip = {}", config.lr, config.clip)));
    }
    let mut params = match init {
        Some(p) => p,
        None => ToyParams::seeded(config.seed, corpus.vocab.len(), config.d)?,
    };
    let batch = TrainingBatch::new(corpus, segments);
    let mut log = Vec::with_capacity(config.steps + 1);
    let entry = |step, r: &LossReport| TrainLogEntry { step, l: r.l, l_p: r.l_p, l_t: r.l_t, acc: r.accuracy() };

    let mut last_good = params.clone();
    for step in 0..config.steps {
        let (report, grad) = loss_and_gradient(&batch, &params, &config.loss)?;
        if !report.l.is_finite() {
            return Err(TrainError::Diverged { step, last_good: Box::new(last_good) });
        }
        last_good.clone_from(&params);
        log.push(entry(step, &report));
        let norm = grad.norm();
        let scale = if norm > config.clip { config.clip / norm } else { 1.0 };
        let mut next = params.clone();
        for (p, g) in next.tensors_mut().into_iter().zip(grad.0.tensors()) {
            for (x, gx) in p.iter_mut().zip(g) {
                *x -= config.lr * scale * gx;
            }
        }
        params = next;
    }
    let report = total_loss(&batch, &params, &config.loss)?;
    if !report.l.is_finite() {
        return Err(TrainError::Diverged { step: config.steps, last_good: Box::new(last_good) });
    }
    log.push(entry(config.steps, &report));
    Ok(TrainOutcome { params, log })
}

#[cfg(test)]
mod tests;
