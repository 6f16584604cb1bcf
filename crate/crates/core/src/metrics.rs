//! Repetition and diversity of generated token sequences.
//!
//! Metrics operate on this crate's tokens (whitespace words with punctuation
//! split off), not on subword units.

use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("n-gram order must be >= 1, got {0}")]
    InvalidOrder(usize),
    #[error("no samples to evaluate")]
    NoSamples,
}

/// `100 · (1 − unique / total)` over the n-grams of `tokens`; 0 when the
/// sequence has no n-grams.
pub fn rep_n<T: Eq + Hash>(tokens: &[T], n: usize) -> Result<f64, MetricsError> {
    if n == 0 {
        return Err(MetricsError::InvalidOrder(n));
    }
    if tokens.len() < n {
        return Ok(0.0);
    }
    let total = tokens.len() - n + 1;
    let unique: HashSet<&[T]> = tokens.windows(n).collect();
    Ok(100.0 * (1.0 - unique.len() as f64 / total as f64))
}

/// `100 · Π_{n=2..4} (1 − rep_n / 100)` from precomputed repetition rates.
pub fn diversity_from_reps(rep_2: f64, rep_3: f64, rep_4: f64) -> f64 {
    100.0 * [rep_2, rep_3, rep_4].iter().map(|r| 1.0 - r / 100.0).product::<f64>()
}

pub fn diversity<T: Eq + Hash>(tokens: &[T]) -> f64 {
    let r = |n| rep_n(tokens, n).expect("order >= 2");
    diversity_from_reps(r(2), r(3), r(4))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub rep_2: f64,
    pub rep_3: f64,
    pub rep_4: f64,
    pub diversity: f64,
    pub tokens: usize,
}

impl SampleMetrics {
    pub fn of<T: Eq + Hash>(tokens: &[T]) -> Self {
        let r = |n| rep_n(tokens, n).expect("order >= 2");
        let (rep_2, rep_3, rep_4) = (r(2), r(3), r(4));
        Self { rep_2, rep_3, rep_4, diversity: diversity_from_reps(rep_2, rep_3, rep_4), tokens: tokens.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Which units the n-grams range over.
    pub token_unit: String,
    pub samples: Vec<SampleMetrics>,
    pub rep_2: f64,
    pub rep_3: f64,
    pub rep_4: f64,
    /// Diversity of the mean repetition rates.
    pub diversity: f64,
    /// Mean of the per-sample diversities.
    pub mean_sample_diversity: f64,
}

/// Per-sample metrics over continuation tokens, plus means in sample order.
pub fn evaluate<T: Eq + Hash, S: AsRef<[T]>>(samples: &[S]) -> Result<EvalReport, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    let per: Vec<SampleMetrics> = samples.iter().map(|s| SampleMetrics::of(s.as_ref())).collect();
    let n = per.len() as f64;
    let mean = |f: fn(&SampleMetrics) -> f64| per.iter().map(f).sum::<f64>() / n;
    let (rep_2, rep_3, rep_4) = (mean(|m| m.rep_2), mean(|m| m.rep_3), mean(|m| m.rep_4));
    Ok(EvalReport {
        token_unit: "whitespace words with ASCII punctuation split off".into(),
        diversity: diversity_from_reps(rep_2, rep_3, rep_4),
        mean_sample_diversity: mean(|m| m.diversity),
        samples: per,
        rep_2,
        rep_3,
        rep_4,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rep_examples() {
        let r = rep_n(&["a", "a", "a", "a"], 2).unwrap();
        assert!((r - 100.0 * (1.0 - 1.0 / 3.0)).abs() < 1e-12);
        assert!((r - 66.67).abs() < 0.005);
        assert_eq!(rep_n(&[1, 2, 3, 4, 5], 2).unwrap(), 0.0);
        assert_eq!(rep_n(&[1, 2], 3).unwrap(), 0.0);
        assert_eq!(rep_n::<u32>(&[], 1).unwrap(), 0.0);
        assert_eq!(rep_n(&[1], 0), Err(MetricsError::InvalidOrder(0)));
    }

    #[test]
    fn diversity_examples() {
        assert_eq!(diversity_from_reps(0.0, 0.0, 0.0), 100.0);
        assert!((diversity_from_reps(50.0, 50.0, 50.0) - 12.5).abs() < 1e-12);
        let d = diversity_from_reps(3.33, 0.69, 0.21);
        let hand = 100.0 * 0.9667 * 0.9931 * 0.9979;
        assert!((d - hand).abs() < 1e-9);
        assert!((d - 95.80).abs() < 0.005);
        assert_eq!(diversity(&["x", "y", "z", "w"]), 100.0);
    }

    #[test]
    fn evaluate_examples() {
        let one = evaluate(&[vec!["a", "b", "a", "b"]]).unwrap();
        assert_eq!(one.samples.len(), 1);
        assert_eq!(one.rep_2, one.samples[0].rep_2);
        assert_eq!(one.diversity, one.samples[0].diversity);

        let s = vec![1, 1, 1, 2];
        let two = evaluate(&[s.clone(), s.clone()]).unwrap();
        assert_eq!(two.rep_3, SampleMetrics::of(&s).rep_3);

        // a a a a: reps 66.67 / 50 / 0 (bigrams aa×3; trigrams aaa×2; one 4-gram).
        // a b c d e: all zero. a b a b a b: bigrams ab,ba,ab,ba,ab → 60; trigrams
        // aba,bab,aba,bab → 50; 4-grams abab,baba,abab → 33.33.
        let three = evaluate(&[vec!["a"; 4], vec!["a", "b", "c", "d", "e"], vec!["a", "b", "a", "b", "a", "b"]]).unwrap();
        let hand2 = (200.0 / 3.0 + 0.0 + 60.0) / 3.0;
        let hand3 = (50.0 + 0.0 + 50.0) / 3.0;
        let hand4 = (0.0 + 0.0 + 100.0 / 3.0) / 3.0;
        assert!((three.rep_2 - hand2).abs() < 1e-9);
        assert!((three.rep_3 - hand3).abs() < 1e-9);
        assert!((three.rep_4 - hand4).abs() < 1e-9);
        let hand_div = 100.0 * (1.0 - hand2 / 100.0) * (1.0 - hand3 / 100.0) * (1.0 - hand4 / 100.0);
        assert!((three.diversity - hand_div).abs() < 1e-9);

        assert_eq!(evaluate::<u8, Vec<u8>>(&[]), Err(MetricsError::NoSamples));
    }

    proptest! {
        #[test]
        fn diversity_matches_formula(t in prop::collection::vec(0u8..5, 0..40)) {
            let d = diversity(&t);
            let f = 100.0 * (2..=4).map(|n| 1.0 - rep_n(&t, n).unwrap() / 100.0).product::<f64>();
            prop_assert!((d - f).abs() < 1e-9);
            prop_assert!((0.0..=100.0).contains(&d));
        }

        #[test]
        fn rep_is_invariant_under_renaming(t in prop::collection::vec(0u8..6, 0..40), n in 1usize..5) {
            let renamed: Vec<u32> = t.iter().map(|&x| 1000 + 7 * u32::from(x)).collect();
            prop_assert_eq!(rep_n(&t, n).unwrap(), rep_n(&renamed, n).unwrap());
        }

        #[test]
        fn fresh_token_never_increases_rep(t in prop::collection::vec(0u8..6, 0..40), n in 1usize..5) {
            let before = rep_n(&t, n).unwrap();
            let mut after = t.clone();
            after.push(99);
            prop_assert!(rep_n(&after, n).unwrap() <= before + 1e-12);
        }
    }
}
