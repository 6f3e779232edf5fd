//! Model contract consumed by every explainer and faithfulness metric.
//!
//! A [`ModelBackend`] tokenizes text, predicts class probabilities and, when
//! it advertises the capability, exposes its embedding layer and gradients of
//! a target-class logit with respect to those embeddings. Gradients are always
//! taken on the pre-softmax logit.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod conformance;
pub mod protocol;
pub mod reference;
pub mod remote;
pub mod synthetic;

pub use reference::{fit_reference, FitOptions, ReferenceClassifier, ReferenceConfig};
pub use remote::RemoteBackend;

/// Tokenized text plus the token → source-word alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub ids: Vec<u32>,
    /// Source word index per token; `None` for special tokens.
    pub word_map: Vec<Option<usize>>,
    pub text: String,
}

impl TokenSequence {
    pub fn new(
        tokens: Vec<String>,
        ids: Vec<u32>,
        word_map: Vec<Option<usize>>,
        text: impl Into<String>,
    ) -> Result<Self> {
        if tokens.len() != ids.len() || tokens.len() != word_map.len() {
            return Err(Error::InvalidInput(format!(
                "token sequence fields disagree in length: {} tokens, {} ids, {} word_map",
                tokens.len(),
                ids.len(),
                word_map.len()
            )));
        }
        let mut last = None;
        for w in word_map.iter().flatten() {
            if let Some(prev) = last {
                if *w < prev {
                    return Err(Error::InvalidInput(
                        "word_map must be non-decreasing".into(),
                    ));
                }
            }
            last = Some(*w);
        }
        Ok(Self {
            tokens,
            ids,
            word_map,
            text: text.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Sub-sequence keeping the tokens whose flag is set, in order.
    pub fn select(&self, keep: &[bool]) -> TokenSequence {
        let mut out = TokenSequence {
            tokens: Vec::new(),
            ids: Vec::new(),
            word_map: Vec::new(),
            text: self.text.clone(),
        };
        for (i, _) in keep.iter().enumerate().filter(|(_, k)| **k) {
            out.tokens.push(self.tokens[i].clone());
            out.ids.push(self.ids[i]);
            out.word_map.push(self.word_map[i]);
        }
        out
    }

    /// Copy with the flagged tokens replaced by `mask_id`.
    pub fn with_masked(&self, masked: &[bool], mask_id: u32) -> TokenSequence {
        let mut out = self.clone();
        for (i, m) in masked.iter().enumerate() {
            if *m {
                out.ids[i] = mask_id;
                out.tokens[i] = MASK_TOKEN.to_string();
            }
        }
        out
    }
}

pub const MASK_TOKEN: &str = "[MASK]";
pub const SEP_TOKEN: &str = "[SEP]";

/// Row-stochastic class probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub const TOLERANCE: f64 = 1e-6;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty probability vector".into()));
        }
        let sum: f64 = probs.iter().sum();
        let in_range = probs
            .iter()
            .all(|p| p.is_finite() && *p >= -Self::TOLERANCE && *p <= 1.0 + Self::TOLERANCE);
        if !in_range || (sum - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "not a probability vector (sum {sum})"
            )));
        }
        Ok(Self(probs.into_iter().map(|p| p.clamp(0.0, 1.0)).collect()))
    }

    pub fn uniform(n_classes: usize) -> Self {
        Self(vec![1.0 / n_classes as f64; n_classes])
    }

    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        Self(exps.into_iter().map(|e| e / sum).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.0.iter().enumerate() {
            if *p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Token embeddings, one row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix(pub Array2<f64>);

impl EmbeddingMatrix {
    pub fn n_tokens(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn zeros(n_tokens: usize, dim: usize) -> Self {
        Self(Array2::zeros((n_tokens, dim)))
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.0
    }

    /// Copy with the rows whose flag is `false` set to zero.
    pub fn keep_rows(&self, keep: &[bool]) -> Self {
        let mut out = self.0.clone();
        for (i, k) in keep.iter().enumerate() {
            if !*k {
                out.row_mut(i).fill(0.0);
            }
        }
        Self(out)
    }

    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        self.0.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    pub fn from_nested(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("ragged embedding matrix".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let arr =
            Array2::from_shape_vec((n, d), flat).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(Self(arr))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Gradients,
    Embeddings,
    NativeAttribution,
}

/// Methods a backend may compute on its own side of the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NativeMethod {
    Deeplift,
    GuidedBackprop,
}

impl NativeMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            NativeMethod::Deeplift => "deeplift",
            NativeMethod::GuidedBackprop => "guided_backprop",
        }
    }
}

/// Reference input used by path and difference-from-reference methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    ZeroEmbeddings,
    MaskToken,
}

impl Baseline {
    pub fn as_str(&self) -> &'static str {
        match self {
            Baseline::ZeroEmbeddings => "zero_embeddings",
            Baseline::MaskToken => "mask_token",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub n_classes: usize,
    pub label_names: Vec<String>,
    pub mask_token_id: Option<u32>,
    pub capabilities: BTreeSet<Capability>,
    #[serde(default)]
    pub native_methods: BTreeSet<NativeMethod>,
    #[serde(default)]
    pub max_length: Option<usize>,
}

impl BackendInfo {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::InvalidInput("backend reports zero classes".into()));
        }
        if self.label_names.len() != self.n_classes {
            return Err(Error::InvalidInput(format!(
                "{} label names for {} classes",
                self.label_names.len(),
                self.n_classes
            )));
        }
        Ok(())
    }

    pub fn has(&self, cap: Capability) -> bool {
        self.capabilities.contains(&cap)
    }

    pub fn require(&self, cap: Capability) -> Result<()> {
        if self.has(cap) {
            Ok(())
        } else {
            Err(Error::CapabilityMissing(format!("{cap:?}").to_lowercase()))
        }
    }

    pub fn default_baseline(&self) -> Baseline {
        if self.mask_token_id.is_some() {
            Baseline::MaskToken
        } else {
            Baseline::ZeroEmbeddings
        }
    }
}

/// The capability surface every explainer and metric is written against.
///
/// Implementations must be safe for concurrent read-only use.
pub trait ModelBackend: Send + Sync {
    fn info(&self) -> &BackendInfo;

    fn tokenize(&self, text: &str) -> Result<TokenSequence>;

    fn predict(&self, batch: &[TokenSequence]) -> Result<Vec<ProbabilityVector>>;

    fn embed(&self, seq: &TokenSequence) -> Result<EmbeddingMatrix> {
        let _ = seq;
        Err(Error::CapabilityMissing("embeddings".into()))
    }

    /// Pre-softmax logits computed from (possibly modified) embeddings.
    fn logits_from_embeddings(&self, rows: &EmbeddingMatrix) -> Result<Vec<f64>> {
        let _ = rows;
        Err(Error::CapabilityMissing("embeddings".into()))
    }

    fn predict_from_embeddings(&self, rows: &EmbeddingMatrix) -> Result<ProbabilityVector> {
        Ok(ProbabilityVector::from_logits(
            &self.logits_from_embeddings(rows)?,
        ))
    }

    /// Gradient of the target-class logit with respect to every embedding entry.
    fn gradient_wrt_embeddings(
        &self,
        rows: &EmbeddingMatrix,
        target: usize,
    ) -> Result<Array2<f64>> {
        let _ = (rows, target);
        Err(Error::CapabilityMissing("gradients".into()))
    }

    /// Internal parameters, when the backend is the built-in reference network.
    fn reference_model(&self) -> Option<&ReferenceClassifier> {
        None
    }

    fn native_attribution(
        &self,
        method: NativeMethod,
        seq: &TokenSequence,
        target: usize,
        baseline: Baseline,
    ) -> Result<Vec<f64>> {
        let _ = (seq, target, baseline);
        Err(Error::CapabilityMissing(format!(
            "native_attribution:{}",
            method.as_str()
        )))
    }

    /// Prediction for an input with no tokens left.
    ///
    /// Backends with a mask token see a single mask token; otherwise the
    /// prediction is uniform.
    fn predict_empty(&self) -> Result<ProbabilityVector> {
        let info = self.info();
        match info.mask_token_id {
            Some(id) => {
                let seq = TokenSequence {
                    tokens: vec![MASK_TOKEN.to_string()],
                    ids: vec![id],
                    word_map: vec![None],
                    text: String::new(),
                };
                Ok(self.predict(std::slice::from_ref(&seq))?.remove(0))
            }
            None => Ok(ProbabilityVector::uniform(info.n_classes)),
        }
    }

    /// Batch prediction that tolerates empty sequences via [`predict_empty`].
    ///
    /// [`predict_empty`]: ModelBackend::predict_empty
    fn predict_allow_empty(&self, batch: &[TokenSequence]) -> Result<Vec<ProbabilityVector>> {
        let non_empty: Vec<TokenSequence> =
            batch.iter().filter(|s| !s.is_empty()).cloned().collect();
        let mut preds = if non_empty.is_empty() {
            Vec::new()
        } else {
            self.predict(&non_empty)?
        }
        .into_iter();
        let mut empty = None;
        let mut out = Vec::with_capacity(batch.len());
        for seq in batch {
            if seq.is_empty() {
                if empty.is_none() {
                    empty = Some(self.predict_empty()?);
                }
                out.push(empty.clone().expect("set above"));
            } else {
                out.push(preds.next().expect("one prediction per non-empty sequence"));
            }
        }
        Ok(out)
    }

    /// Embeddings of the chosen baseline, shaped like `seq`.
    fn baseline_embeddings(
        &self,
        seq: &TokenSequence,
        baseline: Baseline,
    ) -> Result<EmbeddingMatrix> {
        match baseline {
            Baseline::ZeroEmbeddings => {
                let e = self.embed(seq)?;
                Ok(EmbeddingMatrix::zeros(e.n_tokens(), e.dim()))
            }
            Baseline::MaskToken => {
                let mask = self.info().mask_token_id.ok_or_else(|| {
                    Error::CapabilityMissing("mask token for mask_token baseline".into())
                })?;
                self.embed(&seq.with_masked(&vec![true; seq.len()], mask))
            }
        }
    }
}

impl<T: ModelBackend + ?Sized> ModelBackend for Box<T> {
    fn info(&self) -> &BackendInfo {
        (**self).info()
    }
    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        (**self).tokenize(text)
    }
    fn predict(&self, batch: &[TokenSequence]) -> Result<Vec<ProbabilityVector>> {
        (**self).predict(batch)
    }
    fn embed(&self, seq: &TokenSequence) -> Result<EmbeddingMatrix> {
        (**self).embed(seq)
    }
    fn logits_from_embeddings(&self, rows: &EmbeddingMatrix) -> Result<Vec<f64>> {
        (**self).logits_from_embeddings(rows)
    }
    fn predict_from_embeddings(&self, rows: &EmbeddingMatrix) -> Result<ProbabilityVector> {
        (**self).predict_from_embeddings(rows)
    }
    fn gradient_wrt_embeddings(
        &self,
        rows: &EmbeddingMatrix,
        target: usize,
    ) -> Result<Array2<f64>> {
        (**self).gradient_wrt_embeddings(rows, target)
    }
    fn reference_model(&self) -> Option<&ReferenceClassifier> {
        (**self).reference_model()
    }
    fn native_attribution(
        &self,
        method: NativeMethod,
        seq: &TokenSequence,
        target: usize,
        baseline: Baseline,
    ) -> Result<Vec<f64>> {
        (**self).native_attribution(method, seq, target, baseline)
    }
    fn predict_empty(&self) -> Result<ProbabilityVector> {
        (**self).predict_empty()
    }
}
