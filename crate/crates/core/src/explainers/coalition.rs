//! Coalition games over tokens, shared by LIME and the Shapley explainers.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::backend::{ModelBackend, TokenSequence};
use crate::error::{Error, Result};

/// Presence flag per player.
pub type Coalition = Vec<bool>;

/// A cooperative game evaluated in batches.
pub trait Game {
    fn n_players(&self) -> usize;

    fn values(&mut self, coalitions: &[Coalition]) -> Result<Vec<f64>>;

    fn value(&mut self, coalition: &[bool]) -> Result<f64> {
        Ok(self.values(&[coalition.to_vec()])?[0])
    }
}

/// Game defined by a plain function; used for synthetic games.
pub struct FnGame<F> {
    n: usize,
    f: F,
}

impl<F: FnMut(&[bool]) -> f64> FnGame<F> {
    pub fn new(n: usize, f: F) -> Self {
        Self { n, f }
    }
}

impl<F: FnMut(&[bool]) -> f64> Game for FnGame<F> {
    fn n_players(&self) -> usize {
        self.n
    }

    fn values(&mut self, coalitions: &[Coalition]) -> Result<Vec<f64>> {
        Ok(coalitions.iter().map(|c| (self.f)(c)).collect())
    }
}

/// How absent tokens are hidden from the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskingMode {
    Remove,
    MaskToken,
}

impl MaskingMode {
    /// Mask-token replacement when the backend has one, else removal.
    pub fn default_for(backend: &dyn ModelBackend) -> Self {
        if backend.info().mask_token_id.is_some() {
            MaskingMode::MaskToken
        } else {
            MaskingMode::Remove
        }
    }
}

/// `v(S)` = target-class probability with only the tokens in `S` present.
pub struct CoalitionValueFn<'a> {
    backend: &'a dyn ModelBackend,
    seq: &'a TokenSequence,
    target: usize,
    mode: MaskingMode,
    mask_id: u32,
}

impl<'a> CoalitionValueFn<'a> {
    const BATCH: usize = 256;

    pub fn new(
        backend: &'a dyn ModelBackend,
        seq: &'a TokenSequence,
        target: usize,
        mode: MaskingMode,
    ) -> Result<Self> {
        let info = backend.info();
        if target >= info.n_classes {
            return Err(Error::LabelOutOfRange {
                label: target,
                n_classes: info.n_classes,
            });
        }
        let mask_id = match mode {
            MaskingMode::MaskToken => info
                .mask_token_id
                .ok_or_else(|| Error::CapabilityMissing("mask token".into()))?,
            MaskingMode::Remove => 0,
        };
        Ok(Self {
            backend,
            seq,
            target,
            mode,
            mask_id,
        })
    }

    pub fn mode(&self) -> MaskingMode {
        self.mode
    }

    fn perturbed(&self, coalition: &[bool]) -> TokenSequence {
        match self.mode {
            MaskingMode::Remove => self.seq.select(coalition),
            MaskingMode::MaskToken => {
                let absent: Vec<bool> = coalition.iter().map(|p| !p).collect();
                self.seq.with_masked(&absent, self.mask_id)
            }
        }
    }
}

impl Game for CoalitionValueFn<'_> {
    fn n_players(&self) -> usize {
        self.seq.len()
    }

    fn values(&mut self, coalitions: &[Coalition]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(coalitions.len());
        for chunk in coalitions.chunks(Self::BATCH) {
            let batch: Vec<TokenSequence> = chunk.iter().map(|c| self.perturbed(c)).collect();
            let preds = self.backend.predict_allow_empty(&batch)?;
            out.extend(preds.iter().map(|p| p.get(self.target)));
        }
        Ok(out)
    }
}

/// Memoizing wrapper that also counts distinct evaluations.
pub struct CachedGame<G> {
    inner: G,
    cache: HashMap<Coalition, f64>,
}

impl<G: Game> CachedGame<G> {
    pub fn new(inner: G) -> Self {
        Self {
            inner,
            cache: HashMap::new(),
        }
    }

    pub fn evaluations(&self) -> usize {
        self.cache.len()
    }

    pub fn is_cached(&self, c: &[bool]) -> bool {
        self.cache.contains_key(c)
    }
}

impl<G: Game> Game for CachedGame<G> {
    fn n_players(&self) -> usize {
        self.inner.n_players()
    }

    fn values(&mut self, coalitions: &[Coalition]) -> Result<Vec<f64>> {
        let mut missing: Vec<Coalition> = Vec::new();
        for c in coalitions {
            if !self.cache.contains_key(c) && !missing.contains(c) {
                missing.push(c.clone());
            }
        }
        if !missing.is_empty() {
            let vals = self.inner.values(&missing)?;
            for (c, v) in missing.into_iter().zip(vals) {
                self.cache.insert(c, v);
            }
        }
        Ok(coalitions.iter().map(|c| self.cache[c]).collect())
    }
}

/// Coalition for bit pattern `bits` over `n` players.
pub fn coalition_from_bits(bits: usize, n: usize) -> Coalition {
    (0..n).map(|i| bits >> i & 1 == 1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ReferenceClassifier, ReferenceConfig};

    #[test]
    fn full_coalition_matches_prediction() {
        let m = ReferenceClassifier::new(ReferenceConfig::new(vec!["a".into(), "b".into()], 4))
            .unwrap();
        let seq = m.tokenize("one two three").unwrap();
        let mut v = CoalitionValueFn::new(&m, &seq, 1, MaskingMode::Remove).unwrap();
        let full = v.value(&[true, true, true]).unwrap();
        let p = m.predict(std::slice::from_ref(&seq)).unwrap()[0].get(1);
        assert_eq!(full, p);
        // empty input convention: uniform without a mask token
        assert_eq!(v.value(&[false, false, false]).unwrap(), 0.5);
    }

    #[test]
    fn mask_mode_requires_mask_token() {
        let m = ReferenceClassifier::new(ReferenceConfig::new(vec!["a".into(), "b".into()], 4))
            .unwrap();
        let seq = m.tokenize("x").unwrap();
        assert!(matches!(
            CoalitionValueFn::new(&m, &seq, 0, MaskingMode::MaskToken),
            Err(Error::CapabilityMissing(_))
        ));
        assert_eq!(MaskingMode::default_for(&m), MaskingMode::Remove);
    }

    #[test]
    fn cache_deduplicates() {
        let mut calls = 0;
        {
            let mut g = CachedGame::new(FnGame::new(2, |c: &[bool]| {
                calls += 1;
                c.iter().filter(|b| **b).count() as f64
            }));
            let v = g
                .values(&[vec![true, false], vec![true, false], vec![true, true]])
                .unwrap();
            assert_eq!(v, vec![1.0, 1.0, 2.0]);
            g.value(&[true, true]).unwrap();
            assert_eq!(g.evaluations(), 2);
        }
        assert_eq!(calls, 2);
    }
}
