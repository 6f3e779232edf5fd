//! Faithfulness: does the model's behaviour change the way the attribution
//! says it should when tokens are perturbed?

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{rank_by_magnitude, trapezoid, Metric, MetricResult, NormalizedImportance, Scope};
use crate::backend::{ModelBackend, ProbabilityVector, TokenSequence};
use crate::error::{Error, Result};
use crate::explainers::Attribution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftParams {
    pub samples: usize,
    pub seed: u64,
}

impl Default for SoftParams {
    fn default() -> Self {
        Self {
            samples: 30,
            seed: 0,
        }
    }
}

fn check_aligned(seq: &TokenSequence, attribution: &Attribution) -> Result<()> {
    if attribution.scores.len() != seq.len() {
        return Err(Error::Alignment(format!(
            "{} scores for {} tokens",
            attribution.scores.len(),
            seq.len()
        )));
    }
    Ok(())
}

/// Shared Bernoulli-perturbation loop. Row `i` survives with probability
/// `q_i` (sufficiency) or `1 - q_i` (comprehensiveness); dropped rows are
/// zeroed.
pub fn soft_drop(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    q: &NormalizedImportance,
    keep_important: bool,
    params: &SoftParams,
) -> Result<f64> {
    if q.len() != seq.len() {
        return Err(Error::Alignment(format!(
            "{} weights for {} tokens",
            q.len(),
            seq.len()
        )));
    }
    if params.samples == 0 {
        return Err(Error::InvalidInput(
            "soft metrics need at least one sample".into(),
        ));
    }
    let rows = backend.embed(seq)?;
    let original = backend.predict_from_embeddings(&rows)?;
    let predicted = original.argmax();
    let p = original.get(predicted);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut total = 0.0;
    for _ in 0..params.samples {
        let keep: Vec<bool> =
            q.q.iter()
                .map(|qi| {
                    let u: f64 = rng.random();
                    if keep_important {
                        u < *qi
                    } else {
                        u < 1.0 - qi
                    }
                })
                .collect();
        let perturbed = backend.predict_from_embeddings(&rows.keep_rows(&keep))?;
        total += (p - perturbed.get(predicted)).max(0.0);
    }
    Ok(total / params.samples as f64)
}

/// Soft sufficiency (lower is better).
pub fn soft_sufficiency(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    attribution: &Attribution,
    params: &SoftParams,
) -> Result<MetricResult> {
    check_aligned(seq, attribution)?;
    let q = NormalizedImportance::from_scores(&attribution.scores);
    let value = soft_drop(backend, seq, &q, true, params)?;
    Ok(MetricResult::new(Metric::SoftSuff, value, Scope::Instance)
        .with_meta("samples", params.samples)
        .with_meta("seed", params.seed))
}

/// Soft comprehensiveness (higher is better).
pub fn soft_comprehensiveness(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    attribution: &Attribution,
    params: &SoftParams,
) -> Result<MetricResult> {
    check_aligned(seq, attribution)?;
    let q = NormalizedImportance::from_scores(&attribution.scores);
    let value = soft_drop(backend, seq, &q, false, params)?;
    Ok(MetricResult::new(Metric::SoftComp, value, Scope::Instance)
        .with_meta("samples", params.samples)
        .with_meta("seed", params.seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepParams {
    /// Fractions of tokens deleted for the FAD curve.
    pub fad_fractions: Vec<f64>,
    /// Fractions of tokens masked for AUC-TP.
    pub auc_tp_thresholds: Vec<f64>,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            fad_fractions: (0..=10).map(|i| f64::from(i) * 0.05).collect(),
            auc_tp_thresholds: (0..=10).map(|i| f64::from(i) * 0.1).collect(),
        }
    }
}

/// One instance in a perturbation sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepItem<'a> {
    pub seq: &'a TokenSequence,
    pub attribution: &'a Attribution,
    pub gold: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Regime {
    Delete,
    Mask,
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    let sorted = grid.windows(2).all(|w| w[0] < w[1]);
    if grid.len() < 2 || grid[0] != 0.0 || !sorted || grid[grid.len() - 1] > 1.0 {
        return Err(Error::InvalidInput(
            "sweep grid needs at least two ascending fractions in [0, 1] starting at 0".into(),
        ));
    }
    Ok(())
}

/// Number of tokens perturbed at fraction `f` of `n`: `⌈f·n⌉`, tolerant of
/// representation error in `f`.
pub fn perturbed_count(f: f64, n: usize) -> usize {
    let raw = f * n as f64;
    let k = (raw - 1e-9).ceil().max(0.0) as usize;
    k.min(n)
}

fn sweep_predictions(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    scores: &[f64],
    grid: &[f64],
    regime: Regime,
) -> Result<Vec<ProbabilityVector>> {
    let order = rank_by_magnitude(scores);
    let masks: Vec<Vec<bool>> = grid
        .iter()
        .map(|f| {
            let mut hit = vec![false; seq.len()];
            for i in order.iter().take(perturbed_count(*f, seq.len())) {
                hit[*i] = true;
            }
            hit
        })
        .collect();
    match (regime, backend.info().mask_token_id) {
        (Regime::Delete, _) => {
            let batch: Vec<TokenSequence> = masks
                .iter()
                .map(|hit| seq.select(&hit.iter().map(|h| !h).collect::<Vec<_>>()))
                .collect();
            backend.predict_allow_empty(&batch)
        }
        (Regime::Mask, Some(mask_id)) => {
            let batch: Vec<TokenSequence> = masks
                .iter()
                .map(|hit| seq.with_masked(hit, mask_id))
                .collect();
            backend.predict(&batch)
        }
        (Regime::Mask, None) => {
            let rows = backend.embed(seq)?;
            masks
                .iter()
                .map(|hit| {
                    let keep: Vec<bool> = hit.iter().map(|h| !h).collect();
                    backend.predict_from_embeddings(&rows.keep_rows(&keep))
                })
                .collect()
        }
    }
}

/// Probability of the originally predicted class along the sweep.
fn instance_curve(
    backend: &dyn ModelBackend,
    item: &SweepItem<'_>,
    grid: &[f64],
    regime: Regime,
) -> Result<Vec<f64>> {
    check_aligned(item.seq, item.attribution)?;
    validate_grid(grid)?;
    let preds = sweep_predictions(backend, item.seq, &item.attribution.scores, grid, regime)?;
    let predicted = preds[0].argmax();
    Ok(preds.iter().map(|p| p.get(predicted)).collect())
}

/// Accuracy against gold labels along the sweep.
fn dataset_curve(
    backend: &dyn ModelBackend,
    items: &[SweepItem<'_>],
    grid: &[f64],
    regime: Regime,
) -> Result<Vec<f64>> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    validate_grid(grid)?;
    let mut correct = vec![0usize; grid.len()];
    for item in items {
        check_aligned(item.seq, item.attribution)?;
        let gold = item
            .gold
            .ok_or_else(|| Error::MissingGoldLabels(item.attribution.instance_id.clone()))?;
        let preds = sweep_predictions(backend, item.seq, &item.attribution.scores, grid, regime)?;
        for (c, p) in correct.iter_mut().zip(&preds) {
            *c += usize::from(p.argmax() == gold);
        }
    }
    Ok(correct
        .into_iter()
        .map(|c| c as f64 / items.len() as f64)
        .collect())
}

fn normalized_auc(grid: &[f64], curve: &[f64]) -> Result<f64> {
    let f_max = grid[grid.len() - 1];
    if curve[0] == 0.0 {
        return Err(Error::ZeroBaselinePerformance);
    }
    Ok(trapezoid(grid, curve) / (curve[0] * f_max))
}

fn sweep_result(
    metric: Metric,
    value: f64,
    scope: Scope,
    grid: &[f64],
    curve: &[f64],
) -> MetricResult {
    let key = if metric == Metric::FadNauc {
        "fractions"
    } else {
        "thresholds"
    };
    MetricResult::new(metric, value, scope)
        .with_meta(key, json!(grid))
        .with_meta("curve", json!(curve))
}

/// FAD N-AUC on one instance, performance = `p(ŷ)` (lower is better).
pub fn fad_nauc_instance(
    backend: &dyn ModelBackend,
    item: &SweepItem<'_>,
    params: &SweepParams,
) -> Result<MetricResult> {
    let grid = &params.fad_fractions;
    let curve = instance_curve(backend, item, grid, Regime::Delete)?;
    let value = normalized_auc(grid, &curve)?;
    Ok(sweep_result(
        Metric::FadNauc,
        value,
        Scope::Instance,
        grid,
        &curve,
    ))
}

/// FAD N-AUC over a dataset, performance = accuracy vs gold.
pub fn fad_nauc_dataset(
    backend: &dyn ModelBackend,
    items: &[SweepItem<'_>],
    params: &SweepParams,
) -> Result<MetricResult> {
    let grid = &params.fad_fractions;
    let curve = dataset_curve(backend, items, grid, Regime::Delete)?;
    let value = normalized_auc(grid, &curve)?;
    Ok(
        sweep_result(Metric::FadNauc, value, Scope::Dataset, grid, &curve)
            .with_meta("n_instances", items.len()),
    )
}

/// AUC-TP on one instance, performance = `p(ŷ)` (lower is better).
pub fn auc_tp_instance(
    backend: &dyn ModelBackend,
    item: &SweepItem<'_>,
    params: &SweepParams,
) -> Result<MetricResult> {
    let grid = &params.auc_tp_thresholds;
    let curve = instance_curve(backend, item, grid, Regime::Mask)?;
    Ok(sweep_result(
        Metric::AucTp,
        trapezoid(grid, &curve),
        Scope::Instance,
        grid,
        &curve,
    ))
}

/// AUC-TP over a dataset, performance = accuracy vs gold.
pub fn auc_tp_dataset(
    backend: &dyn ModelBackend,
    items: &[SweepItem<'_>],
    params: &SweepParams,
) -> Result<MetricResult> {
    let grid = &params.auc_tp_thresholds;
    let curve = dataset_curve(backend, items, grid, Regime::Mask)?;
    Ok(sweep_result(
        Metric::AucTp,
        trapezoid(grid, &curve),
        Scope::Dataset,
        grid,
        &curve,
    )
    .with_meta("n_instances", items.len()))
}
