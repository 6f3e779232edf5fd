//! Word ↔ token alignment.
//!
//! Plausibility metrics work on whitespace words; faithfulness metrics and
//! explainers work on model tokens. Token scores project onto words by
//! summation, which keeps additive attributions additive.

use crate::backend::{TokenSequence, SEP_TOKEN};
use crate::error::{Error, Result};
use crate::explainers::Attribution;

use super::RationaleMask;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordTokenAlignment {
    pub word_to_tokens: Vec<Vec<usize>>,
}

impl WordTokenAlignment {
    pub fn new(seq: &TokenSequence, n_words: usize) -> Result<Self> {
        let mut word_to_tokens = vec![Vec::new(); n_words];
        for (t, w) in seq.word_map.iter().enumerate() {
            if let Some(w) = w {
                let slot = word_to_tokens.get_mut(*w).ok_or_else(|| {
                    Error::Alignment(format!(
                        "token {t} maps to word {w} but the text has {n_words} words"
                    ))
                })?;
                slot.push(t);
            }
        }
        Ok(Self { word_to_tokens })
    }

    pub fn n_words(&self) -> usize {
        self.word_to_tokens.len()
    }
}

/// Word-level rationale → token-level mask. Every token of a rationale word is
/// marked; special tokens are never marked.
pub fn align_rationale(rationale: &RationaleMask, seq: &TokenSequence) -> Result<Vec<bool>> {
    let alignment = WordTokenAlignment::new(seq, rationale.len())?;
    let mut mask = vec![false; seq.len()];
    for (w, tokens) in alignment.word_to_tokens.iter().enumerate() {
        if rationale.0[w] {
            for t in tokens {
                mask[*t] = true;
            }
        }
    }
    Ok(mask)
}

/// Word-level importance scores.
///
/// `ignored` marks words that must never be selected as rationale, such as the
/// `[SEP]` separator of sentence pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct WordScores {
    pub words: Vec<String>,
    pub scores: Vec<f64>,
    pub ignored: Vec<bool>,
}

impl WordScores {
    pub fn new(words: Vec<String>, scores: Vec<f64>) -> Self {
        let ignored = words.iter().map(|w| w == SEP_TOKEN).collect();
        Self {
            words,
            scores,
            ignored,
        }
    }

    /// Scores without word strings, for tests and synthetic inputs.
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let n = scores.len();
        Self {
            words: vec![String::new(); n],
            scores,
            ignored: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Token attribution → word scores (sum of signed token scores per word).
pub fn project(
    attribution: &Attribution,
    seq: &TokenSequence,
    words: &[String],
) -> Result<WordScores> {
    if attribution.scores.len() != seq.len() {
        return Err(Error::Alignment(format!(
            "{} scores for {} tokens",
            attribution.scores.len(),
            seq.len()
        )));
    }
    let alignment = WordTokenAlignment::new(seq, words.len())?;
    let scores = alignment
        .word_to_tokens
        .iter()
        .map(|tokens| tokens.iter().map(|t| attribution.scores[*t]).sum())
        .collect();
    Ok(WordScores::new(words.to_vec(), scores))
}
