//! LIME: weighted ridge surrogate over binary token-presence masks.
//!
//! The kernel lives in mask space, `π(z) = exp(-D(z)² / σ²)` with
//! `D(z) = 1 - |z| / n`, so sampling needs no embeddings.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::coalition::{Coalition, Game};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimeParams {
    pub n_samples: usize,
    pub kernel_sigma: f64,
    pub ridge_lambda: f64,
    pub seed: u64,
}

impl Default for LimeParams {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            kernel_sigma: 0.25,
            ridge_lambda: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LimeFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

/// Perturbation masks: the unperturbed input first, then masks with
/// `k ~ U{1..n}` tokens switched off, the subset chosen uniformly.
pub fn sample_masks(n: usize, n_samples: usize, seed: u64) -> Vec<Coalition> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masks = Vec::with_capacity(n_samples);
    masks.push(vec![true; n]);
    while masks.len() < n_samples {
        let k = rng.random_range(1..=n);
        let mut z = vec![true; n];
        for i in index::sample(&mut rng, n, k) {
            z[i] = false;
        }
        masks.push(z);
    }
    masks
}

pub fn kernel_weight(z: &[bool], sigma: f64) -> f64 {
    let n = z.len() as f64;
    let active = z.iter().filter(|b| **b).count() as f64;
    let dist = 1.0 - active / n;
    (-(dist * dist) / (sigma * sigma)).exp()
}

/// Weighted ridge regression with an unpenalized intercept, solved through
/// the normal equations.
pub fn weighted_ridge(
    masks: &[Coalition],
    targets: &[f64],
    weights: &[f64],
    lambda: f64,
) -> Result<LimeFit> {
    let n = masks.first().map_or(0, Vec::len);
    let p = n + 1;
    let mut design = DMatrix::<f64>::zeros(masks.len(), p);
    for (r, z) in masks.iter().enumerate() {
        design[(r, 0)] = 1.0;
        for (j, on) in z.iter().enumerate() {
            design[(r, j + 1)] = f64::from(u8::from(*on));
        }
    }
    let w = DVector::from_column_slice(weights);
    let y = DVector::from_column_slice(targets);
    let weighted = DMatrix::from_fn(masks.len(), p, |r, c| design[(r, c)] * w[r]);
    let mut gram = design.transpose() * &weighted;
    for j in 1..p {
        gram[(j, j)] += lambda;
    }
    let rhs = weighted.transpose() * y;
    let chol = gram.cholesky().ok_or(Error::DegenerateDesign)?;
    let beta = chol.solve(&rhs);
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::DegenerateDesign);
    }
    Ok(LimeFit {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
    })
}

/// Fits the local surrogate for any coalition game.
pub fn lime_on_game(game: &mut dyn Game, params: &LimeParams) -> Result<LimeFit> {
    let n = game.n_players();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if params.n_samples < n + 2 {
        return Err(Error::InvalidInput(format!(
            "LIME needs at least {} samples for {} tokens, got {}",
            n + 2,
            n,
            params.n_samples
        )));
    }
    if params.kernel_sigma <= 0.0 || params.ridge_lambda < 0.0 {
        return Err(Error::InvalidInput(
            "kernel_sigma must be > 0 and ridge_lambda >= 0".into(),
        ));
    }
    let masks = sample_masks(n, params.n_samples, params.seed);
    let targets = game.values(&masks)?;
    let weights: Vec<f64> = masks
        .iter()
        .map(|z| kernel_weight(z, params.kernel_sigma))
        .collect();
    weighted_ridge(&masks, &targets, &weights, params.ridge_lambda)
}
