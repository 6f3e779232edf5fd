//! Gradient-based explainers operating on the embedding layer.

use ndarray::Array2;
use serde_json::json;

use super::{Attribution, Method};
use crate::backend::{Baseline, Capability, EmbeddingMatrix, ModelBackend, TokenSequence};
use crate::error::{Error, Result};

fn require_gradients(backend: &dyn ModelBackend) -> Result<()> {
    let info = backend.info();
    info.require(Capability::Embeddings)?;
    info.require(Capability::Gradients)
}

fn row_norms(g: &Array2<f64>) -> Vec<f64> {
    g.rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

fn row_dots(a: &Array2<f64>, b: &Array2<f64>) -> Vec<f64> {
    a.rows()
        .into_iter()
        .zip(b.rows())
        .map(|(x, y)| x.dot(&y))
        .collect()
}

/// L2 norm of the logit gradient per token.
pub fn saliency(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    target: usize,
) -> Result<Attribution> {
    require_gradients(backend)?;
    let rows = backend.embed(seq)?;
    let grad = backend.gradient_wrt_embeddings(&rows, target)?;
    Ok(Attribution::for_sequence(
        seq,
        Method::Saliency,
        target,
        row_norms(&grad),
    ))
}

/// Signed gradient · embedding per token.
pub fn gradient_x_input(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    target: usize,
) -> Result<Attribution> {
    require_gradients(backend)?;
    let rows = backend.embed(seq)?;
    let grad = backend.gradient_wrt_embeddings(&rows, target)?;
    Ok(Attribution::for_sequence(
        seq,
        Method::GradientXInput,
        target,
        row_dots(&grad, &rows.0),
    ))
}

/// Trapezoidal path integral of gradients from the baseline to the input.
pub fn integrated_gradients(
    backend: &dyn ModelBackend,
    seq: &TokenSequence,
    target: usize,
    steps: usize,
    baseline: Option<Baseline>,
) -> Result<Attribution> {
    require_gradients(backend)?;
    if steps < 2 {
        return Err(Error::InvalidInput(
            "integrated gradients needs at least 2 steps".into(),
        ));
    }
    let baseline = baseline.unwrap_or_else(|| backend.info().default_baseline());
    let input = backend.embed(seq)?;
    let base = backend.baseline_embeddings(seq, baseline)?;
    let delta = &input.0 - &base.0;

    let mut avg = Array2::<f64>::zeros(input.0.dim());
    for k in 0..=steps {
        let alpha = k as f64 / steps as f64;
        let point = EmbeddingMatrix(&base.0 + &(&delta * alpha));
        let grad = backend.gradient_wrt_embeddings(&point, target)?;
        let w = if k == 0 || k == steps { 0.5 } else { 1.0 } / steps as f64;
        avg.scaled_add(w, &grad);
    }
    let mut attr = Attribution::for_sequence(
        seq,
        Method::IntegratedGradients,
        target,
        row_dots(&delta, &avg),
    );
    attr.meta.insert("steps".into(), json!(steps));
    attr.meta
        .insert("baseline".into(), json!(baseline.as_str()));
    Ok(attr)
}
