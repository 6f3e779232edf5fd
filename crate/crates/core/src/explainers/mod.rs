//! Post-hoc feature-attribution methods.
//!
//! Every method produces an [`Attribution`] with one score per model token, so
//! any explainer's output can feed any metric.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backend::{Baseline, Capability, ModelBackend, NativeMethod, TokenSequence};
use crate::error::{Error, Result};

pub mod coalition;
pub mod gradient;
pub mod internals;
pub mod lime;
pub mod shapley;

pub use coalition::{CoalitionValueFn, FnGame, Game, MaskingMode};
pub use gradient::{gradient_x_input, integrated_gradients, saliency};
pub use internals::{deeplift, guided_backprop};
pub use lime::LimeParams;
pub use shapley::{InteractionEstimator, InteractionValues, PartitionTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Saliency,
    GradientXInput,
    IntegratedGradients,
    Deeplift,
    GuidedBackprop,
    Lime,
    PartitionShap,
    ShapInteractions,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Saliency,
        Method::GradientXInput,
        Method::IntegratedGradients,
        Method::Deeplift,
        Method::GuidedBackprop,
        Method::Lime,
        Method::PartitionShap,
        Method::ShapInteractions,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Saliency => "saliency",
            Method::GradientXInput => "gradient_x_input",
            Method::IntegratedGradients => "integrated_gradients",
            Method::Deeplift => "deeplift",
            Method::GuidedBackprop => "guided_backprop",
            Method::Lime => "lime",
            Method::PartitionShap => "partition_shap",
            Method::ShapInteractions => "shap_interactions",
        }
    }

    pub fn valid_names() -> String {
        Method::ALL.map(|m| m.as_str()).join(", ")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method {s:?}; valid methods: {}",
                    Method::valid_names()
                ))
            })
    }
}

/// Per-token importance scores from one method for one instance and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub instance_id: String,
    pub method: Method,
    pub target_class: usize,
    #[serde(rename = "tokens")]
    pub token_texts: Vec<String>,
    pub scores: Vec<f64>,
    #[serde(default)]
    pub meta: BTreeMap<String, Value>,
}

impl Attribution {
    pub fn new(
        instance_id: impl Into<String>,
        method: Method,
        target_class: usize,
        scores: Vec<f64>,
        token_texts: Vec<String>,
    ) -> Self {
        Self {
            instance_id: instance_id.into(),
            method,
            target_class,
            token_texts,
            scores,
            meta: BTreeMap::new(),
        }
    }

    pub(crate) fn for_sequence(
        seq: &TokenSequence,
        method: Method,
        target: usize,
        scores: Vec<f64>,
    ) -> Self {
        Self::new(String::new(), method, target, scores, seq.tokens.clone())
    }

    pub fn with_instance_id(mut self, id: impl Into<String>) -> Self {
        self.instance_id = id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Checks one finite score per token.
    pub fn validate(&self) -> Result<()> {
        if self.scores.len() != self.token_texts.len() {
            return Err(Error::Alignment(format!(
                "{} scores for {} tokens",
                self.scores.len(),
                self.token_texts.len()
            )));
        }
        if let Some(i) = self.scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("score {i} is not finite")));
        }
        Ok(())
    }
}

/// Writes attributions as JSONL, one record per line.
pub fn to_jsonl(attributions: &[Attribution]) -> Result<String> {
    let mut out = String::new();
    for a in attributions {
        out.push_str(&serde_json::to_string(a)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn from_jsonl(content: &str) -> Result<Vec<Attribution>> {
    content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(row, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                row: row + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Parameters for every method; each method reads only its own fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainerParams {
    pub ig_steps: usize,
    pub baseline: Option<Baseline>,
    pub lime: LimeParams,
    pub shap_budget: usize,
    pub partition_tree: PartitionTree,
    pub shap_interactions_budget: usize,
    pub interaction_estimator: InteractionEstimator,
    pub masking: Option<MaskingMode>,
    pub seed: u64,
}

impl Default for ExplainerParams {
    fn default() -> Self {
        Self {
            ig_steps: 64,
            baseline: None,
            lime: LimeParams::default(),
            shap_budget: 512,
            partition_tree: PartitionTree::Auto,
            shap_interactions_budget: 4096,
            interaction_estimator: InteractionEstimator::Auto,
            masking: None,
            seed: 0,
        }
    }
}

fn masking_for(backend: &dyn ModelBackend, params: &ExplainerParams) -> MaskingMode {
    params
        .masking
        .unwrap_or_else(|| MaskingMode::default_for(backend))
}

fn masking_str(m: MaskingMode) -> &'static str {
    match m {
        MaskingMode::Remove => "remove",
        MaskingMode::MaskToken => "mask_token",
    }
}

pub fn lime(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    target: usize,
    params: &LimeParams,
    masking: MaskingMode,
) -> Result<Attribution> {
    let mut game = CoalitionValueFn::new(backend, seq, target, masking)?;
    let fit = lime::lime_on_game(&mut game, params)?;
    let mut attr = Attribution::for_sequence(seq, Method::Lime, target, fit.coefficients);
    attr.meta.insert("seed".into(), json!(params.seed));
    attr.meta.insert("samples".into(), json!(params.n_samples));
    attr.meta.insert("intercept".into(), json!(fit.intercept));
    attr.meta
        .insert("masking".into(), json!(masking_str(masking)));
    Ok(attr)
}

pub fn partition_shap(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    target: usize,
    budget: usize,
    tree: PartitionTree,
    masking: MaskingMode,
) -> Result<Attribution> {
    let mut game = CoalitionValueFn::new(backend, seq, target, masking)?;
    let result = shapley::partition_shap_on_game(&mut game, budget, tree)?;
    let mut attr = Attribution::for_sequence(seq, Method::PartitionShap, target, result.scores);
    attr.meta.insert("budget".into(), json!(budget));
    attr.meta
        .insert("evaluations".into(), json!(result.evaluations));
    attr.meta.insert("tree".into(), json!(result.tree));
    attr.meta
        .insert("masking".into(), json!(masking_str(masking)));
    Ok(attr)
}

pub fn shap_interactions(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    target: usize,
    budget: usize,
    seed: u64,
    estimator: InteractionEstimator,
    masking: MaskingMode,
) -> Result<(InteractionValues, Attribution)> {
    let mut game = CoalitionValueFn::new(backend, seq, target, masking)?;
    let (iv, used) = shapley::shap_interactions_on_game(&mut game, budget, seed, estimator)?;
    let mut attr = Attribution::for_sequence(seq, Method::ShapInteractions, target, iv.aggregate());
    attr.meta.insert("budget".into(), json!(budget));
    attr.meta.insert("seed".into(), json!(seed));
    attr.meta.insert("estimator".into(), json!(used));
    attr.meta
        .insert("masking".into(), json!(masking_str(masking)));
    Ok((iv, attr))
}

/// Runs one method with its parameters from `params`.
pub fn explain(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    target: usize,
    method: Method,
    params: &ExplainerParams,
) -> Result<Attribution> {
    if seq.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n_classes = backend.info().n_classes;
    if target >= n_classes {
        return Err(Error::LabelOutOfRange {
            label: target,
            n_classes,
        });
    }
    let masking = masking_for(backend, params);
    let attr = match method {
        Method::Saliency => saliency(backend, seq, target)?,
        Method::GradientXInput => gradient_x_input(backend, seq, target)?,
        Method::IntegratedGradients => {
            integrated_gradients(backend, seq, target, params.ig_steps, params.baseline)?
        }
        Method::Deeplift => deeplift(backend, seq, target, params.baseline)?,
        Method::GuidedBackprop => guided_backprop(backend, seq, target)?,
        Method::Lime => {
            let lp = LimeParams {
                seed: params.seed,
                ..params.lime
            };
            lime(backend, seq, target, &lp, masking)?
        }
        Method::PartitionShap => partition_shap(
            backend,
            seq,
            target,
            params.shap_budget,
            params.partition_tree,
            masking,
        )?,
        Method::ShapInteractions => {
            shap_interactions(
                backend,
                seq,
                target,
                params.shap_interactions_budget,
                params.seed,
                params.interaction_estimator,
                masking,
            )?
            .1
        }
    };
    attr.validate()?;
    Ok(attr)
}

/// Fails with `CapabilityMissing` when `backend` cannot run `method`,
/// without calling the model.
pub fn check_supported(backend: &dyn ModelBackend, method: Method) -> Result<()> {
    let info = backend.info();
    let native = |m: NativeMethod| {
        if backend.reference_model().is_some()
            || (info.has(Capability::NativeAttribution) && info.native_methods.contains(&m))
        {
            Ok(())
        } else {
            Err(Error::CapabilityMissing(format!(
                "{method} needs the reference model or native_attribution:{}",
                m.as_str()
            )))
        }
    };
    match method {
        Method::Saliency | Method::GradientXInput | Method::IntegratedGradients => {
            info.require(Capability::Embeddings)?;
            info.require(Capability::Gradients)
        }
        Method::Deeplift => native(NativeMethod::Deeplift),
        Method::GuidedBackprop => native(NativeMethod::GuidedBackprop),
        Method::Lime | Method::PartitionShap | Method::ShapInteractions => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ReferenceClassifier, ReferenceConfig};

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_value(m).unwrap(), json!(m.as_str()));
        }
        let err = "shap".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("partition_shap"));
    }

    #[test]
    fn every_method_gives_one_finite_score_per_token() {
        let m = ReferenceClassifier::new(ReferenceConfig::new(vec!["n".into(), "p".into()], 1))
            .unwrap();
        let seq = m
            .tokenize("a masterpiece of how not to make a movie")
            .unwrap();
        let params = ExplainerParams {
            lime: LimeParams {
                n_samples: 200,
                ..LimeParams::default()
            },
            ..ExplainerParams::default()
        };
        for method in Method::ALL {
            let a = explain(&m, &seq, 1, method, &params).unwrap();
            assert_eq!(a.len(), seq.len(), "{method}");
            assert_eq!(a.method, method);
            assert!(a.scores.iter().all(|s| s.is_finite()));
        }
    }

    #[test]
    fn stochastic_methods_are_deterministic() {
        let m = ReferenceClassifier::new(ReferenceConfig::new(vec!["n".into(), "p".into()], 2))
            .unwrap();
        let seq = m
            .tokenize("same seed same answer every time please")
            .unwrap();
        let params = ExplainerParams {
            seed: 17,
            ..ExplainerParams::default()
        };
        for method in [
            Method::Lime,
            Method::PartitionShap,
            Method::ShapInteractions,
        ] {
            let a = explain(&m, &seq, 0, method, &params).unwrap();
            let b = explain(&m, &seq, 0, method, &params).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn jsonl_export_shape() {
        let a = Attribution::new(
            "i1",
            Method::Lime,
            1,
            vec![0.5, -0.25],
            vec!["a".into(), "b".into()],
        );
        let text = to_jsonl(std::slice::from_ref(&a)).unwrap();
        let v: Value = serde_json::from_str(text.trim()).unwrap();
        for key in [
            "instance_id",
            "method",
            "target_class",
            "tokens",
            "scores",
            "meta",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(from_jsonl(&text).unwrap(), vec![a]);
    }

    #[test]
    fn validate_catches_misalignment_and_nan() {
        let mut a = Attribution::new("x", Method::Saliency, 0, vec![1.0], vec![]);
        assert!(a.validate().is_err());
        a.token_texts.push("t".into());
        a.scores[0] = f64::NAN;
        assert!(a.validate().is_err());
    }
}
