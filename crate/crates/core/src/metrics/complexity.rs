//! Complexity: how concentrated the attribution mass is.

use super::{Metric, MetricResult, Scope};
use crate::error::{Error, Result};

fn magnitudes(scores: &[f64]) -> Result<(Vec<f64>, f64)> {
    let abs: Vec<f64> = scores.iter().map(|s| s.abs()).collect();
    let total: f64 = abs.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::AllZeroScores);
    }
    Ok((abs, total))
}

/// Shannon entropy (nats) of `|s| / Σ|s|`; lower means more concentrated.
pub fn complexity(scores: &[f64]) -> Result<MetricResult> {
    let (abs, total) = magnitudes(scores)?;
    let entropy: f64 = abs
        .iter()
        .map(|a| a / total)
        .filter(|p| *p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    Ok(MetricResult::new(
        Metric::Complexity,
        entropy.max(0.0),
        Scope::Instance,
    ))
}

/// Gini index of `|s|`; 0 for a flat vector, `(n-1)/n` for a one-hot one.
pub fn sparseness(scores: &[f64]) -> Result<MetricResult> {
    let (mut abs, total) = magnitudes(scores)?;
    abs.sort_by(f64::total_cmp);
    let n = abs.len() as f64;
    let weighted: f64 = abs
        .iter()
        .enumerate()
        .map(|(k, a)| (2.0 * (k as f64 + 1.0) - n - 1.0) * a)
        .sum();
    // near-flat vectors can round a hair below zero
    let gini = (weighted / (n * total)).max(0.0);
    Ok(MetricResult::new(Metric::Sparseness, gini, Scope::Instance))
}
