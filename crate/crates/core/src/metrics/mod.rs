//! Evaluation metrics over attributions: faithfulness (soft sufficiency and
//! comprehensiveness, FAD N-AUC, AUC-TP), plausibility against human
//! rationales (IOU-F1, token F1, AUPRC) and complexity (entropy, Gini).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::explainers::Method;

pub mod aggregate;
pub mod complexity;
pub mod faithfulness;
pub mod plausibility;

pub use aggregate::{aggregate, Cell, MetricTable};
pub use complexity::{complexity, sparseness};
pub use faithfulness::{
    auc_tp_dataset, auc_tp_instance, fad_nauc_dataset, fad_nauc_instance, soft_comprehensiveness,
    soft_sufficiency, SoftParams, SweepItem, SweepParams,
};
pub use plausibility::{auprc, iou_f1, token_f1, PlausibilityParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    SoftSuff,
    SoftComp,
    FadNauc,
    AucTp,
    IouF1,
    TokenF1,
    Auprc,
    Complexity,
    Sparseness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Faithfulness,
    Plausibility,
    Complexity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerBetter,
    HigherBetter,
}

impl Direction {
    /// True when `a` is strictly better than `b`.
    pub fn better(&self, a: f64, b: f64) -> bool {
        match self {
            Direction::LowerBetter => a < b,
            Direction::HigherBetter => a > b,
        }
    }

    pub fn arrow(&self) -> &'static str {
        match self {
            Direction::LowerBetter => "↓",
            Direction::HigherBetter => "↑",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Instance,
    Dataset,
}

impl Metric {
    pub const ALL: [Metric; 9] = [
        Metric::SoftSuff,
        Metric::SoftComp,
        Metric::FadNauc,
        Metric::AucTp,
        Metric::IouF1,
        Metric::TokenF1,
        Metric::Auprc,
        Metric::Complexity,
        Metric::Sparseness,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::SoftSuff => "soft_suff",
            Metric::SoftComp => "soft_comp",
            Metric::FadNauc => "fad_nauc",
            Metric::AucTp => "auc_tp",
            Metric::IouF1 => "iou_f1",
            Metric::TokenF1 => "token_f1",
            Metric::Auprc => "auprc",
            Metric::Complexity => "complexity",
            Metric::Sparseness => "sparseness",
        }
    }

    pub fn direction(&self) -> Direction {
        match self {
            Metric::SoftComp
            | Metric::IouF1
            | Metric::TokenF1
            | Metric::Auprc
            | Metric::Sparseness => Direction::HigherBetter,
            Metric::SoftSuff | Metric::FadNauc | Metric::AucTp | Metric::Complexity => {
                Direction::LowerBetter
            }
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Metric::SoftSuff | Metric::SoftComp | Metric::FadNauc | Metric::AucTp => {
                Family::Faithfulness
            }
            Metric::IouF1 | Metric::TokenF1 | Metric::Auprc => Family::Plausibility,
            Metric::Complexity | Metric::Sparseness => Family::Complexity,
        }
    }

    /// One-line definition, used in reports and verbalizer prompts.
    pub fn definition(&self) -> &'static str {
        match self {
            Metric::SoftSuff => {
                "mean drop in the predicted-class probability when tokens are kept with probability equal to their normalized importance"
            }
            Metric::SoftComp => {
                "mean drop in the predicted-class probability when tokens are removed with probability equal to their normalized importance"
            }
            Metric::FadNauc => {
                "normalized area under the performance curve as the most important tokens are deleted"
            }
            Metric::AucTp => {
                "area under the performance curve as the most important tokens are masked"
            }
            Metric::IouF1 => {
                "F1 over rationale spans, where a predicted span matches a human span at IoU of at least 0.5"
            }
            Metric::TokenF1 => "word-level F1 between the top-k words and the human rationale",
            Metric::Auprc => {
                "area under the precision-recall curve of importance scores against the human rationale"
            }
            Metric::Complexity => "Shannon entropy of the normalized absolute importance scores",
            Metric::Sparseness => "Gini index of the absolute importance scores",
        }
    }

    pub fn valid_names() -> String {
        Metric::ALL.map(|m| m.as_str()).join(", ")
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown metric {s:?}; valid metrics: {}",
                    Metric::valid_names()
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub scope: Scope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    pub metric: Metric,
    pub value: f64,
    pub direction: Direction,
    #[serde(default)]
    pub meta: BTreeMap<String, Value>,
}

impl MetricResult {
    pub fn new(metric: Metric, value: f64, scope: Scope) -> Self {
        Self {
            scope,
            method: None,
            instance_id: None,
            metric,
            value,
            direction: metric.direction(),
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn for_method(mut self, method: Method) -> Self {
        self.method = Some(method);
        self
    }

    pub fn for_instance(mut self, id: impl Into<String>) -> Self {
        self.instance_id = Some(id.into());
        self
    }
}

/// Per-token retention probabilities: min-max normalized `|score|`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedImportance {
    pub q: Vec<f64>,
}

impl NormalizedImportance {
    pub fn from_scores(scores: &[f64]) -> Self {
        let abs: Vec<f64> = scores.iter().map(|s| s.abs()).collect();
        let min = abs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = abs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = max - min;
        let q = if range <= 0.0 || !range.is_finite() {
            vec![0.5; abs.len()]
        } else {
            abs.iter()
                .map(|a| ((a - min) / range).clamp(0.0, 1.0))
                .collect()
        };
        Self { q }
    }

    /// Explicit probabilities, for callers that want to pin the mask.
    pub fn forced(q: Vec<f64>) -> Result<Self> {
        if q.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput(
                "retention probabilities must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { q })
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// Token indices ordered by descending `|score|`, ties by lower index.
pub fn rank_by_magnitude(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*b].abs().total_cmp(&scores[*a].abs()));
    order
}

/// Trapezoidal area under `ys` sampled at `xs`.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}
