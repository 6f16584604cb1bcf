//! Decoding latency and step counts, phrase mode against token-only mode.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use cog_core::corpus::TokenId;
use cog_core::decoder::{generate_from_tokens, GenerationConfig};
use cog_core::encoder::EncoderBackend;
use cog_core::index::PhraseIndex;

use crate::error::{CliError, CliResult};

pub const MIN_RUNS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeBench {
    /// Median over runs of the mean wall-clock seconds per sample.
    pub seconds_per_sample: f64,
    pub steps_per_sample: f64,
    pub tokens_per_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub runs: usize,
    pub samples: usize,
    pub max_new_tokens: usize,
    pub phrase: ModeBench,
    pub tokens_only: ModeBench,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn measure(
    index: &PhraseIndex,
    backend: &dyn EncoderBackend,
    prefixes: &[Vec<TokenId>],
    config: &GenerationConfig,
    runs: usize,
) -> CliResult<ModeBench> {
    let (mut secs, mut steps, mut tps) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..runs {
        let (mut t, mut s, mut tok) = (0.0, 0usize, 0usize);
        for (i, p) in prefixes.iter().enumerate() {
            let cfg = GenerationConfig { seed: config.seed.wrapping_add(i as u64), ..*config };
            let start = Instant::now();
            let g = generate_from_tokens(index, backend, p, &cfg)?;
            t += start.elapsed().as_secs_f64();
            s += g.trace.step_count();
            tok += g.trace.token_count();
        }
        let n = prefixes.len() as f64;
        secs.push(t / n);
        steps.push(s as f64 / n);
        tps.push(if s == 0 { 0.0 } else { tok as f64 / s as f64 });
    }
    Ok(ModeBench { seconds_per_sample: median(secs), steps_per_sample: median(steps), tokens_per_step: median(tps) })
}

/// Runs both modes on the same prefixes and seeds, `runs` times each.
pub fn bench(
    index: &PhraseIndex,
    backend: &dyn EncoderBackend,
    prefixes: &[Vec<TokenId>],
    config: &GenerationConfig,
    runs: usize,
) -> CliResult<BenchReport> {
    if runs < MIN_RUNS {
        return Err(CliError::Usage(format!("bench needs at least {MIN_RUNS} runs, got {runs}")));
    }
    if prefixes.is_empty() {
        return Err(CliError::Data("no prefixes to benchmark".into()));
    }
    config.validate()?;
    let mut phrase_cfg = *config;
    phrase_cfg.search.tokens_only = false;
    let mut token_cfg = *config;
    token_cfg.search.tokens_only = true;
    Ok(BenchReport {
        runs,
        samples: prefixes.len(),
        max_new_tokens: config.max_new_tokens,
        phrase: measure(index, backend, prefixes, &phrase_cfg, runs)?,
        tokens_only: measure(index, backend, prefixes, &token_cfg, runs)?,
    })
}
