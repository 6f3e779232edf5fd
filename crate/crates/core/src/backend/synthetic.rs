//! Planted-keyword backend: the prediction is driven by a single marked token,
//! so the ground-truth attribution is known exactly.

use ndarray::{array, Array1, Array2};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::reference::hash_token;
use super::{ReferenceClassifier, ReferenceConfig, TokenSequence};
use crate::datasets::{CanonicalInstance, Dataset, Task};
use crate::error::Result;

const VOCAB: usize = 4096;

pub const POSITIVE_KEYWORD: &str = "splendid";
pub const NEGATIVE_KEYWORD: &str = "dreadful";

const FILLERS: [&str; 24] = [
    "the", "film", "story", "actor", "scene", "plot", "camera", "music", "was", "is", "a", "an",
    "director", "script", "ending", "and", "with", "score", "cast", "some", "this", "that", "very",
    "quite",
];

/// Reference-architecture classifier whose decision is driven by a planted
/// keyword.
///
/// The positive keyword embeds as `[1, 0]`, the negative one as `[-1, 0]` and
/// every other vocabulary row as `[ε, 1]` with `|ε| ≤ 0.02`. Two hidden units
/// read `±x₀` of the pooled embedding, so the logit gap is
/// `strength · x₀`.
pub fn planted_keyword_reference(strength: f64) -> Result<ReferenceClassifier> {
    let config = ReferenceConfig {
        vocab_size: VOCAB,
        embed_dim: 2,
        hidden_dim: 2,
        label_names: vec!["negative".into(), "positive".into()],
        seed: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut embeddings = Array2::zeros((VOCAB, 2));
    for mut row in embeddings.rows_mut() {
        row[0] = rng.random_range(-0.02..=0.02);
        row[1] = 1.0;
    }
    for (kw, sign) in [(POSITIVE_KEYWORD, 1.0), (NEGATIVE_KEYWORD, -1.0)] {
        let id = hash_token(kw, VOCAB) as usize;
        embeddings[[id, 0]] = sign;
        embeddings[[id, 1]] = 0.0;
    }
    let w1 = array![[1.0, -1.0], [0.0, 0.0]];
    let b1 = Array1::zeros(2);
    let w2 = array![[0.0, strength], [strength, 0.0]];
    let b2 = Array1::zeros(2);
    ReferenceClassifier::from_parameters(config, embeddings, w1, b1, w2, b2)
}

/// Ground-truth attribution: mass only on the keyword tokens.
pub fn oracle_scores(seq: &TokenSequence) -> Vec<f64> {
    seq.tokens
        .iter()
        .map(|t| f64::from(u8::from(t == POSITIVE_KEYWORD || t == NEGATIVE_KEYWORD)))
        .collect()
}

/// `n` instances of 5–11 filler words with one keyword planted at a random
/// position; the label is the keyword's polarity. The rationale marks the
/// keyword.
pub fn planted_keyword_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances = (0..n)
        .map(|i| {
            let len = rng.random_range(5..=11);
            let mut words: Vec<&str> = (0..len)
                .map(|_| *FILLERS.choose(&mut rng).expect("non-empty"))
                .collect();
            let label = usize::from(rng.random_bool(0.5));
            let pos = rng.random_range(0..=words.len());
            words.insert(
                pos,
                if label == 1 {
                    POSITIVE_KEYWORD
                } else {
                    NEGATIVE_KEYWORD
                },
            );
            let rationale = (0..words.len()).map(|w| w == pos).collect();
            CanonicalInstance::single(
                format!("planted-{seed}-{i}"),
                words.join(" "),
                label,
                Some(rationale),
            )
        })
        .collect();
    Dataset {
        name: format!("planted_keyword_{seed}"),
        task: Task::Sentiment,
        label_names: vec!["negative".into(), "positive".into()],
        instances,
    }
}
