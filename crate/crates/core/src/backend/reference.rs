//! Built-in differentiable reference classifier.
//!
//! Architecture: embedding lookup → mean-pool over tokens → affine → ReLU →
//! affine → softmax. Small enough that every gradient method, including the
//! ones that need ReLU internals, is computed exactly.

use std::collections::BTreeSet;
use std::hash::Hasher;

use fnv::FnvHasher;
use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    BackendInfo, Capability, EmbeddingMatrix, ModelBackend, NativeMethod, ProbabilityVector,
    TokenSequence, MASK_TOKEN, SEP_TOKEN,
};
use crate::datasets::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub label_names: Vec<String>,
    pub seed: u64,
}

impl ReferenceConfig {
    pub fn new(label_names: Vec<String>, seed: u64) -> Self {
        Self {
            vocab_size: 4096,
            embed_dim: 16,
            hidden_dim: 32,
            label_names,
            seed,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub pooled: Array1<f64>,
    pub pre_activation: Array1<f64>,
    pub hidden: Array1<f64>,
    pub logits: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ReferenceClassifier {
    config: ReferenceConfig,
    info: BackendInfo,
    /// V × d
    pub embeddings: Array2<f64>,
    /// d × h
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// h × C
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl ReferenceClassifier {
    /// Seeded initialization; identical configs give identical parameters.
    pub fn new(config: ReferenceConfig) -> Result<Self> {
        let (v, d, h, c) = (
            config.vocab_size,
            config.embed_dim,
            config.hidden_dim,
            config.n_classes(),
        );
        if v == 0 || d == 0 || h == 0 || c == 0 {
            return Err(Error::InvalidInput(
                "reference model dimensions must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut draw = |rows: usize, cols: usize, std: f64| {
            let normal = Normal::new(0.0, std).expect("finite std");
            Array2::from_shape_fn((rows, cols), |_| normal.sample(&mut rng))
        };
        let embeddings = draw(v, d, 1.0);
        let w1 = draw(d, h, (1.0 / d as f64).sqrt());
        let b1 = draw(1, h, 0.1).row(0).to_owned();
        let w2 = draw(h, c, (1.0 / h as f64).sqrt());
        let b2 = Array1::zeros(c);
        Self::from_parameters(config, embeddings, w1, b1, w2, b2)
    }

    pub fn from_parameters(
        config: ReferenceConfig,
        embeddings: Array2<f64>,
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    ) -> Result<Self> {
        let (v, d, h, c) = (
            config.vocab_size,
            config.embed_dim,
            config.hidden_dim,
            config.n_classes(),
        );
        let shapes_ok = embeddings.dim() == (v, d)
            && w1.dim() == (d, h)
            && b1.len() == h
            && w2.dim() == (h, c)
            && b2.len() == c;
        if !shapes_ok {
            return Err(Error::InvalidInput(
                "parameter shapes do not match the reference config".into(),
            ));
        }
        let info = BackendInfo {
            n_classes: c,
            label_names: config.label_names.clone(),
            mask_token_id: None,
            capabilities: BTreeSet::from([
                Capability::Gradients,
                Capability::Embeddings,
                Capability::NativeAttribution,
            ]),
            native_methods: BTreeSet::from([NativeMethod::Deeplift, NativeMethod::GuidedBackprop]),
            max_length: None,
        };
        Ok(Self {
            config,
            info,
            embeddings,
            w1,
            b1,
            w2,
            b2,
        })
    }

    pub fn config(&self) -> &ReferenceConfig {
        &self.config
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes()
    }

    fn check_rows(&self, rows: &EmbeddingMatrix) -> Result<()> {
        if rows.n_tokens() == 0 {
            return Err(Error::EmptyInput);
        }
        if rows.dim() != self.config.embed_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.embed_dim,
                got: rows.dim(),
            });
        }
        Ok(())
    }

    fn check_target(&self, target: usize) -> Result<()> {
        if target >= self.n_classes() {
            return Err(Error::LabelOutOfRange {
                label: target,
                n_classes: self.n_classes(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, rows: &EmbeddingMatrix) -> Result<ForwardTrace> {
        self.check_rows(rows)?;
        let pooled = rows.0.mean_axis(Axis(0)).expect("non-empty");
        let pre_activation = pooled.dot(&self.w1) + &self.b1;
        let hidden = pre_activation.mapv(|z| z.max(0.0));
        let logits = hidden.dot(&self.w2) + &self.b2;
        Ok(ForwardTrace {
            pooled,
            pre_activation,
            hidden,
            logits,
        })
    }

    /// Backpropagates a gradient on the hidden pre-activation down to the
    /// embedding rows: every row receives `W1 · g / n`.
    pub fn backprop_pre_activation(&self, grad_pre: &Array1<f64>, n_tokens: usize) -> Array2<f64> {
        let row = self.w1.dot(grad_pre) / n_tokens as f64;
        let mut out = Array2::zeros((n_tokens, self.config.embed_dim));
        for mut r in out.rows_mut() {
            r.assign(&row);
        }
        out
    }

    fn logit_gradient(&self, rows: &EmbeddingMatrix, target: usize) -> Result<Array2<f64>> {
        self.check_target(target)?;
        let trace = self.forward(rows)?;
        let upstream = self.w2.column(target);
        let grad_pre = Array1::from_shape_fn(upstream.len(), |k| {
            if trace.pre_activation[k] > 0.0 {
                upstream[k]
            } else {
                0.0
            }
        });
        Ok(self.backprop_pre_activation(&grad_pre, rows.n_tokens()))
    }

    fn ids_to_rows(&self, ids: &[u32]) -> Result<EmbeddingMatrix> {
        if ids.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut out = Array2::zeros((ids.len(), self.config.embed_dim));
        for (i, id) in ids.iter().enumerate() {
            let id = *id as usize;
            if id >= self.config.vocab_size {
                return Err(Error::InvalidInput(format!(
                    "token id {id} outside vocabulary"
                )));
            }
            out.row_mut(i).assign(&self.embeddings.row(id));
        }
        Ok(EmbeddingMatrix(out))
    }

    /// Mean cross-entropy over already tokenized examples.
    pub fn loss(&self, examples: &[(Vec<u32>, usize)]) -> Result<f64> {
        let mut total = 0.0;
        for (ids, label) in examples {
            let trace = self.forward(&self.ids_to_rows(ids)?)?;
            let p = ProbabilityVector::from_logits(trace.logits.as_slice().expect("contiguous"));
            total -= p.get(*label).max(f64::MIN_POSITIVE).ln();
        }
        Ok(total / examples.len().max(1) as f64)
    }
}

/// Lowercased whitespace/punctuation tokenizer hashing into `[0, vocab_size)`.
///
/// Words are whitespace-separated; each word splits into alphanumeric runs and
/// single punctuation characters, all mapped to that word's index. `[SEP]` and
/// `[MASK]` stay whole.
pub fn reference_tokenize(text: &str, vocab_size: usize) -> Result<TokenSequence> {
    let mut tokens = Vec::new();
    let mut word_map = Vec::new();
    for (w, word) in text.split_whitespace().enumerate() {
        if word == SEP_TOKEN || word == MASK_TOKEN {
            tokens.push(word.to_string());
            word_map.push(Some(w));
            continue;
        }
        let lower = word.to_lowercase();
        let mut current = String::new();
        for ch in lower.chars() {
            if ch.is_alphanumeric() {
                current.push(ch);
            } else {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                    word_map.push(Some(w));
                }
                tokens.push(ch.to_string());
                word_map.push(Some(w));
            }
        }
        if !current.is_empty() {
            tokens.push(current);
            word_map.push(Some(w));
        }
    }
    if tokens.is_empty() {
        return Err(Error::EmptyInput);
    }
    let ids = tokens.iter().map(|t| hash_token(t, vocab_size)).collect();
    TokenSequence::new(tokens, ids, word_map, text)
}

pub fn hash_token(token: &str, vocab_size: usize) -> u32 {
    let mut hasher = FnvHasher::default();
    hasher.write(token.as_bytes());
    (hasher.finish() % vocab_size as u64) as u32
}

impl ModelBackend for ReferenceClassifier {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        reference_tokenize(text, self.config.vocab_size)
    }

    fn predict(&self, batch: &[TokenSequence]) -> Result<Vec<ProbabilityVector>> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        batch
            .iter()
            .map(|seq| self.predict_from_embeddings(&self.embed(seq)?))
            .collect()
    }

    fn embed(&self, seq: &TokenSequence) -> Result<EmbeddingMatrix> {
        self.ids_to_rows(&seq.ids)
    }

    fn logits_from_embeddings(&self, rows: &EmbeddingMatrix) -> Result<Vec<f64>> {
        Ok(self.forward(rows)?.logits.to_vec())
    }

    fn gradient_wrt_embeddings(
        &self,
        rows: &EmbeddingMatrix,
        target: usize,
    ) -> Result<Array2<f64>> {
        self.logit_gradient(rows, target)
    }

    fn reference_model(&self) -> Option<&ReferenceClassifier> {
        Some(self)
    }

    fn native_attribution(
        &self,
        method: NativeMethod,
        seq: &TokenSequence,
        target: usize,
        baseline: super::Baseline,
    ) -> Result<Vec<f64>> {
        let attribution = match method {
            NativeMethod::Deeplift => {
                crate::explainers::deeplift(self, seq, target, Some(baseline))?
            }
            NativeMethod::GuidedBackprop => crate::explainers::guided_backprop(self, seq, target)?,
        };
        Ok(attribution.scores)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.1,
            seed: 0,
        }
    }
}

/// Full-batch gradient descent on mean cross-entropy, starting from the
/// seeded initialization.
pub fn fit_reference(dataset: &Dataset, options: FitOptions) -> Result<ReferenceClassifier> {
    let config = ReferenceConfig::new(dataset.label_names.clone(), options.seed);
    fit_with_config(dataset, config, options)
}

pub fn fit_with_config(
    dataset: &Dataset,
    config: ReferenceConfig,
    options: FitOptions,
) -> Result<ReferenceClassifier> {
    let n_classes = config.n_classes();
    let mut model = ReferenceClassifier::new(config)?;
    let mut examples = Vec::with_capacity(dataset.instances.len());
    for inst in &dataset.instances {
        if inst.label >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: inst.label,
                n_classes,
            });
        }
        let seq = model.tokenize(&inst.text())?;
        examples.push((seq.ids, inst.label));
    }
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let scale = 1.0 / examples.len() as f64;
    let (d, h) = (model.config.embed_dim, model.config.hidden_dim);

    for _ in 0..options.epochs {
        let mut g_w1 = Array2::<f64>::zeros((d, h));
        let mut g_b1 = Array1::<f64>::zeros(h);
        let mut g_w2 = Array2::<f64>::zeros((h, n_classes));
        let mut g_b2 = Array1::<f64>::zeros(n_classes);
        let mut g_emb: Vec<(u32, Array1<f64>)> = Vec::new();

        for (ids, label) in &examples {
            let trace = model.forward(&model.ids_to_rows(ids)?)?;
            let probs =
                ProbabilityVector::from_logits(trace.logits.as_slice().expect("contiguous"));
            let mut d_logits = Array1::from(probs.as_slice().to_vec());
            d_logits[*label] -= 1.0;
            d_logits *= scale;

            for k in 0..h {
                for c in 0..n_classes {
                    g_w2[[k, c]] += trace.hidden[k] * d_logits[c];
                }
            }
            g_b2 += &d_logits;
            let d_hidden = model.w2.dot(&d_logits);
            let d_pre = Array1::from_shape_fn(h, |k| {
                if trace.pre_activation[k] > 0.0 {
                    d_hidden[k]
                } else {
                    0.0
                }
            });
            for j in 0..d {
                for k in 0..h {
                    g_w1[[j, k]] += trace.pooled[j] * d_pre[k];
                }
            }
            g_b1 += &d_pre;
            let d_row = model.w1.dot(&d_pre) / ids.len() as f64;
            for id in ids {
                g_emb.push((*id, d_row.clone()));
            }
        }

        let lr = options.lr;
        model.w1.scaled_add(-lr, &g_w1);
        model.b1.scaled_add(-lr, &g_b1);
        model.w2.scaled_add(-lr, &g_w2);
        model.b2.scaled_add(-lr, &g_b2);
        for (id, g) in g_emb {
            model.embeddings.row_mut(id as usize).scaled_add(-lr, &g);
        }
    }
    Ok(model)
}
