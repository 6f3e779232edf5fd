//! Plausibility: agreement between word-level importance and human
//! rationales.

use serde::{Deserialize, Serialize};

use super::{Metric, MetricResult, Scope};
use crate::datasets::{RationaleMask, WordScores};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlausibilityParams {
    /// Fixed number of words to select; `None` uses the gold rationale size.
    pub fixed_k: Option<usize>,
}

/// Gold rationale with separator words removed, after the basic checks.
fn gold(words: &WordScores, rationale: &RationaleMask) -> Result<Vec<bool>> {
    if rationale.len() != words.len() {
        return Err(Error::Alignment(format!(
            "rationale covers {} words, scores cover {}",
            rationale.len(),
            words.len()
        )));
    }
    let g: Vec<bool> = rationale
        .0
        .iter()
        .zip(&words.ignored)
        .map(|(r, ign)| *r && !*ign)
        .collect();
    if !g.iter().any(|b| *b) {
        return Err(Error::MissingRationale);
    }
    Ok(g)
}

/// Top-k words by `|score|`, ties to the lower index, never selecting
/// ignored words.
pub fn top_k_words(words: &WordScores, k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..words.len()).filter(|i| !words.ignored[*i]).collect();
    order.sort_by(|a, b| words.scores[*b].abs().total_cmp(&words.scores[*a].abs()));
    let mut selected = vec![false; words.len()];
    for i in order.into_iter().take(k) {
        selected[i] = true;
    }
    selected
}

fn predicted(words: &WordScores, gold: &[bool], params: &PlausibilityParams) -> (Vec<bool>, usize) {
    let k = params
        .fixed_k
        .unwrap_or_else(|| gold.iter().filter(|b| **b).count());
    (top_k_words(words, k), k)
}

/// Maximal runs of `true`, as half-open index ranges.
pub fn spans(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, on) in mask.iter().enumerate() {
        match (on, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, mask.len()));
    }
    out
}

fn span_iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter = a.1.min(b.1).saturating_sub(a.0.max(b.0));
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    inter as f64 / union as f64
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Span-level F1 where a span matches at IoU ≥ 0.5.
pub fn iou_f1(
    words: &WordScores,
    rationale: &RationaleMask,
    params: &PlausibilityParams,
) -> Result<MetricResult> {
    let g = gold(words, rationale)?;
    let (pred, k) = predicted(words, &g, params);
    let gold_spans = spans(&g);
    let pred_spans = spans(&pred);
    let matches = |s: &(usize, usize), others: &[(usize, usize)]| {
        others.iter().any(|o| span_iou(*s, *o) >= 0.5)
    };
    let precision = if pred_spans.is_empty() {
        0.0
    } else {
        pred_spans
            .iter()
            .filter(|s| matches(s, &gold_spans))
            .count() as f64
            / pred_spans.len() as f64
    };
    let recall = gold_spans
        .iter()
        .filter(|s| matches(s, &pred_spans))
        .count() as f64
        / gold_spans.len() as f64;
    Ok(MetricResult::new(Metric::IouF1, f1(precision, recall), Scope::Instance).with_meta("k", k))
}

/// Word-level F1 between the top-k selection and the rationale.
pub fn token_f1(
    words: &WordScores,
    rationale: &RationaleMask,
    params: &PlausibilityParams,
) -> Result<MetricResult> {
    let g = gold(words, rationale)?;
    let (pred, k) = predicted(words, &g, params);
    let tp = pred.iter().zip(&g).filter(|(p, g)| **p && **g).count() as f64;
    let n_pred = pred.iter().filter(|b| **b).count() as f64;
    let n_gold = g.iter().filter(|b| **b).count() as f64;
    let precision = if n_pred == 0.0 { 0.0 } else { tp / n_pred };
    let recall = tp / n_gold;
    Ok(
        MetricResult::new(Metric::TokenF1, f1(precision, recall), Scope::Instance)
            .with_meta("k", k),
    )
}

/// Average precision of `|score|` against the rationale. Words with equal
/// scores share one threshold, so a constant score vector yields the
/// positive rate.
pub fn auprc(words: &WordScores, rationale: &RationaleMask) -> Result<MetricResult> {
    let g = gold(words, rationale)?;
    let mut items: Vec<(f64, bool)> = (0..words.len())
        .filter(|i| !words.ignored[*i])
        .map(|i| (words.scores[i].abs(), g[i]))
        .collect();
    items.sort_by(|a, b| b.0.total_cmp(&a.0));
    let positives = items.iter().filter(|(_, y)| *y).count() as f64;
    let (mut tp, mut fp, mut prev_recall, mut ap) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < items.len() {
        let threshold = items[i].0;
        while i < items.len() && items[i].0 == threshold {
            if items[i].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let recall = tp / positives;
        ap += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    Ok(MetricResult::new(Metric::Auprc, ap, Scope::Instance))
}
