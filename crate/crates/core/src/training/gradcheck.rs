use crate::encoder::ToyParams;

use super::loss::{flatten, set_flat};
use super::{loss_and_gradient, total_loss, LossConfig, TrainError, TrainingBatch};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Flat parameter index of the worst entry.
    pub worst: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Central differences `(f(x+ε·eᵢ) − f(x−ε·eᵢ)) / 2ε` against `grad`, with
/// relative error `|a − n| / max(|a|, |n|, 1e-12)`.
pub fn max_relative_error(f: impl Fn(&[f64]) -> f64, x: &[f64], grad: &[f64], eps: f64) -> GradCheck {
    assert_eq!(x.len(), grad.len(), "gradient length differs from parameter length");
    let mut out = GradCheck { max_rel_error: 0.0, worst: 0, analytic: 0.0, numeric: 0.0 };
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let up = f(&probe);
        probe[i] = x[i] - eps;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grad[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        if rel > out.max_rel_error {
            out = GradCheck { max_rel_error: rel, worst: i, analytic, numeric };
        }
    }
    out
}

/// Checks the analytic gradient of the total loss at `params`.
pub fn finite_diff_check(
    batch: &TrainingBatch<'_>,
    params: &ToyParams,
    config: &LossConfig,
    eps: f64,
) -> Result<GradCheck, TrainError> {
    let (_, grad) = loss_and_gradient(batch, params, config)?;
    let x = flatten(params);
    let f = |flat: &[f64]| {
        let mut p = params.clone();
        set_flat(&mut p, flat);
        total_loss(batch, &p, config).map(|r| r.l).unwrap_or(f64::NAN)
    };
    Ok(max_relative_error(f, &x, &grad.flatten(), eps))
}
