//! Explainers that need the network's ReLU internals: DeepLIFT (rescale rule)
//! and Guided Backprop. Remote backends must serve these natively.

use ndarray::Array1;
use serde_json::json;

use super::{Attribution, Method};
use crate::backend::{Baseline, Capability, ModelBackend, NativeMethod, TokenSequence};
use crate::error::{Error, Result};

fn native(
    backend: &dyn ModelBackend,
    method: NativeMethod,
    seq: &TokenSequence,
    target: usize,
    baseline: Baseline,
) -> Result<Vec<f64>> {
    let info = backend.info();
    if !info.has(Capability::NativeAttribution) || !info.native_methods.contains(&method) {
        return Err(Error::CapabilityMissing(format!(
            "native_attribution:{}",
            method.as_str()
        )));
    }
    let scores = backend.native_attribution(method, seq, target, baseline)?;
    if scores.len() != seq.len() {
        return Err(Error::Alignment(format!(
            "backend returned {} scores for {} tokens",
            scores.len(),
            seq.len()
        )));
    }
    Ok(scores)
}

/// DeepLIFT with the rescale rule against the chosen baseline.
///
/// On the reference network the scores sum to
/// `logit_target(input) - logit_target(baseline)`.
pub fn deeplift(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    target: usize,
    baseline: Option<Baseline>,
) -> Result<Attribution> {
    let baseline = baseline.unwrap_or_else(|| backend.info().default_baseline());
    let scores = match backend.reference_model() {
        Some(model) => {
            if target >= model.n_classes() {
                return Err(Error::LabelOutOfRange {
                    label: target,
                    n_classes: model.n_classes(),
                });
            }
            let input = backend.embed(seq)?;
            let base = backend.baseline_embeddings(seq, baseline)?;
            let fx = model.forward(&input)?;
            let fb = model.forward(&base)?;
            let upstream = model.w2.column(target);
            let grad_pre = Array1::from_shape_fn(upstream.len(), |k| {
                let dz = fx.pre_activation[k] - fb.pre_activation[k];
                let multiplier = if dz != 0.0 {
                    ((fx.hidden[k] - fb.hidden[k]) / dz).clamp(0.0, 1.0)
                } else if fx.pre_activation[k] > 0.0 {
                    1.0
                } else {
                    0.0
                };
                upstream[k] * multiplier
            });
            let multipliers = model.backprop_pre_activation(&grad_pre, seq.len());
            let delta = &input.0 - &base.0;
            delta
                .rows()
                .into_iter()
                .zip(multipliers.rows())
                .map(|(d, m)| d.dot(&m))
                .collect()
        }
        None => native(backend, NativeMethod::Deeplift, seq, target, baseline)?,
    };
    let mut attr = Attribution::for_sequence(seq, Method::Deeplift, target, scores);
    attr.meta
        .insert("baseline".into(), json!(baseline.as_str()));
    Ok(attr)
}

/// Guided Backprop: at each ReLU the backward signal passes only where the
/// forward pre-activation is positive and the incoming gradient is
/// non-negative. Score = L2 norm of the guided gradient per token.
pub fn guided_backprop(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    target: usize,
) -> Result<Attribution> {
    let scores = match backend.reference_model() {
        Some(model) => {
            if target >= model.n_classes() {
                return Err(Error::LabelOutOfRange {
                    label: target,
                    n_classes: model.n_classes(),
                });
            }
            let input = backend.embed(seq)?;
            let trace = model.forward(&input)?;
            let upstream = model.w2.column(target);
            let grad_pre = Array1::from_shape_fn(upstream.len(), |k| {
                if trace.pre_activation[k] > 0.0 && upstream[k] >= 0.0 {
                    upstream[k]
                } else {
                    0.0
                }
            });
            model
                .backprop_pre_activation(&grad_pre, seq.len())
                .rows()
                .into_iter()
                .map(|r| r.dot(&r).sqrt())
                .collect()
        }
        None => native(
            backend,
            NativeMethod::GuidedBackprop,
            seq,
            target,
            backend.info().default_baseline(),
        )?,
    };
    Ok(Attribution::for_sequence(
        seq,
        Method::GuidedBackprop,
        target,
        scores,
    ))
}
