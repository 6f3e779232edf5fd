//! Shapley-family explainers: exact Shapley values, Owen values over a
//! balanced binary partition of contiguous token spans, and pairwise
//! Shapley interaction indices.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::coalition::{coalition_from_bits, Coalition, Game};
use crate::error::{Error, Result};

/// Largest player count evaluated by full enumeration in flat mode.
pub const MAX_FLAT_PLAYERS: usize = 12;
/// Largest player count for exact interaction indices.
pub const MAX_EXACT_INTERACTION_PLAYERS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionTree {
    /// Flat tree when `2^n` fits the budget and `n <= 12`, else balanced.
    Auto,
    /// Every token a direct leaf of the root: exact Shapley values.
    Flat,
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionEstimator {
    /// Exact for `n <= 10`, sampling otherwise.
    Auto,
    Exact,
    Sampling,
}

/// All `2^n` coalition values indexed by bit pattern.
fn enumerate_values(game: &mut dyn Game) -> Result<Vec<f64>> {
    let n = game.n_players();
    let coalitions: Vec<Coalition> = (0..1usize << n)
        .map(|b| coalition_from_bits(b, n))
        .collect();
    game.values(&coalitions)
}

fn factorials(n: usize) -> Vec<f64> {
    let mut f = vec![1.0; n + 1];
    for i in 1..=n {
        f[i] = f[i - 1] * i as f64;
    }
    f
}

fn shapley_from_table(values: &[f64], n: usize) -> Vec<f64> {
    let fact = factorials(n);
    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        for s in 0..values.len() {
            if s & bit != 0 {
                continue;
            }
            let size = s.count_ones() as usize;
            let w = fact[size] * fact[n - size - 1] / fact[n];
            *p += w * (values[s | bit] - values[s]);
        }
    }
    phi
}

/// Exact Shapley values by enumerating every coalition.
pub fn exact_shapley(game: &mut dyn Game) -> Result<Vec<f64>> {
    let n = game.n_players();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if n > 20 {
        return Err(Error::InvalidInput(format!(
            "{n} players is too many to enumerate"
        )));
    }
    let values = enumerate_values(game)?;
    Ok(shapley_from_table(&values, n))
}

#[derive(Debug, Clone)]
struct Node {
    lo: usize,
    hi: usize,
    value: f64,
    contexts: Vec<Coalition>,
}

impl Node {
    fn priority(&self) -> f64 {
        self.value.abs()
    }
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // max-heap on |value|, earlier spans first on ties
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority()
            .total_cmp(&other.priority())
            .then_with(|| other.lo.cmp(&self.lo))
    }
}

fn with_span(c: &[bool], lo: usize, hi: usize) -> Coalition {
    let mut out = c.to_vec();
    out[lo..hi].iter_mut().for_each(|b| *b = true);
    out
}

fn eval(
    game: &mut dyn Game,
    cache: &mut HashMap<Coalition, f64>,
    reqs: &[Coalition],
) -> Result<Vec<f64>> {
    let mut missing: Vec<Coalition> = Vec::new();
    for r in reqs {
        if !cache.contains_key(r) && !missing.contains(r) {
            missing.push(r.clone());
        }
    }
    if !missing.is_empty() {
        let vals = game.values(&missing)?;
        for (c, v) in missing.into_iter().zip(vals) {
            cache.insert(c, v);
        }
    }
    Ok(reqs.iter().map(|r| cache[r]).collect())
}

/// Coalitions needed for the Owen value of span `lo..hi` over `contexts`:
/// each context without and with the span.
fn span_requests(contexts: &[Coalition], lo: usize, hi: usize) -> Vec<Coalition> {
    contexts
        .iter()
        .flat_map(|c| [c.clone(), with_span(c, lo, hi)])
        .collect()
}

/// Owen values over a balanced binary tree of contiguous spans, expanding the
/// largest-magnitude nodes first until `budget` distinct evaluations are
/// spent. Unexpanded spans share their value equally, so the result always
/// sums to `v(N) - v(∅)`.
pub fn owen_values(game: &mut dyn Game, budget: usize) -> Result<(Vec<f64>, usize)> {
    let n = game.n_players();
    let mut cache: HashMap<Coalition, f64> = HashMap::new();
    let empty = vec![false; n];
    let root_vals = eval(game, &mut cache, &[empty.clone(), vec![true; n]])?;
    let mut scores = vec![0.0; n];
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        lo: 0,
        hi: n,
        value: root_vals[1] - root_vals[0],
        contexts: vec![empty],
    });

    while let Some(node) = heap.pop() {
        if node.hi - node.lo == 1 {
            scores[node.lo] = node.value;
            continue;
        }
        let mid = node.lo + (node.hi - node.lo) / 2;
        let left_ctx: Vec<Coalition> = node
            .contexts
            .iter()
            .flat_map(|c| [c.clone(), with_span(c, mid, node.hi)])
            .collect();
        let right_ctx: Vec<Coalition> = node
            .contexts
            .iter()
            .flat_map(|c| [c.clone(), with_span(c, node.lo, mid)])
            .collect();
        let left_req = span_requests(&left_ctx, node.lo, mid);
        let right_req = span_requests(&right_ctx, mid, node.hi);
        let mut fresh: Vec<&Coalition> = Vec::new();
        for r in left_req.iter().chain(&right_req) {
            if !cache.contains_key(r) && !fresh.contains(&r) {
                fresh.push(r);
            }
        }
        if cache.len() + fresh.len() > budget {
            let share = node.value / (node.hi - node.lo) as f64;
            scores[node.lo..node.hi].iter_mut().for_each(|s| *s = share);
            continue;
        }
        let mean_diff = |vals: Vec<f64>| -> f64 {
            let pairs = vals.len() / 2;
            vals.chunks(2).map(|p| p[1] - p[0]).sum::<f64>() / pairs as f64
        };
        let left_value = mean_diff(eval(game, &mut cache, &left_req)?);
        let right_value = mean_diff(eval(game, &mut cache, &right_req)?);
        heap.push(Node {
            lo: node.lo,
            hi: mid,
            value: left_value,
            contexts: left_ctx,
        });
        heap.push(Node {
            lo: mid,
            hi: node.hi,
            value: right_value,
            contexts: right_ctx,
        });
    }
    Ok((scores, cache.len()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionResult {
    pub scores: Vec<f64>,
    pub tree: PartitionTree,
    pub evaluations: usize,
}

/// Partition SHAP over any game.
pub fn partition_shap_on_game(
    game: &mut dyn Game,
    budget: usize,
    tree: PartitionTree,
) -> Result<PartitionResult> {
    let n = game.n_players();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if budget < 2 * n {
        return Err(Error::BudgetTooSmall {
            budget,
            required: 2 * n,
        });
    }
    let flat_fits = n <= MAX_FLAT_PLAYERS && (1usize << n) <= budget;
    let tree = match tree {
        PartitionTree::Auto if flat_fits => PartitionTree::Flat,
        PartitionTree::Auto => PartitionTree::Balanced,
        PartitionTree::Flat if !flat_fits => {
            return Err(Error::BudgetTooSmall {
                budget,
                required: 1 << n.min(MAX_FLAT_PLAYERS + 1),
            })
        }
        other => other,
    };
    match tree {
        PartitionTree::Flat => Ok(PartitionResult {
            scores: exact_shapley(game)?,
            tree,
            evaluations: 1 << n,
        }),
        _ => {
            let (scores, evaluations) = owen_values(game, budget)?;
            Ok(PartitionResult {
                scores,
                tree: PartitionTree::Balanced,
                evaluations,
            })
        }
    }
}

/// Order-2 Shapley interaction values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionValues {
    pub order: usize,
    /// Shapley value per token.
    pub main_effects: Vec<f64>,
    /// Symmetric, zero diagonal.
    pub pairwise: Vec<Vec<f64>>,
}

impl InteractionValues {
    /// `φ_i + ½ Σ_{j≠i} SII(i, j)` per token.
    pub fn aggregate(&self) -> Vec<f64> {
        self.main_effects
            .iter()
            .zip(&self.pairwise)
            .map(|(phi, row)| phi + 0.5 * row.iter().sum::<f64>())
            .collect()
    }
}

#[allow(clippy::needless_range_loop)]
fn exact_interactions(game: &mut dyn Game) -> Result<InteractionValues> {
    let n = game.n_players();
    let values = enumerate_values(game)?;
    let fact = factorials(n);
    let phi = shapley_from_table(&values, n);
    let mut pairwise = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let (bi, bj) = (1usize << i, 1usize << j);
            let mut total = 0.0;
            for s in 0..values.len() {
                if s & (bi | bj) != 0 {
                    continue;
                }
                let size = s.count_ones() as usize;
                let w = fact[size] * fact[n - size - 2] / fact[n - 1];
                total += w * (values[s | bi | bj] - values[s | bi] - values[s | bj] + values[s]);
            }
            pairwise[i][j] = total;
            pairwise[j][i] = total;
        }
    }
    Ok(InteractionValues {
        order: 2,
        main_effects: phi,
        pairwise,
    })
}

/// Minimum budget for the sampling estimator: one permutation per half of
/// the budget and one discrete derivative per pair.
pub fn min_sampling_budget(n: usize) -> usize {
    2 * (n + 1) + 4 * n * (n - 1) / 2
}

fn sampled_interactions(
    game: &mut dyn Game,
    budget: usize,
    seed: u64,
) -> Result<InteractionValues> {
    let n = game.n_players();
    let required = min_sampling_budget(n);
    if budget < required {
        return Err(Error::BudgetTooSmall { budget, required });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Shapley values: permutation sampling on half the budget.
    let n_perms = ((budget / 2) / (n + 1)).max(1);
    let mut perm_requests = Vec::with_capacity(n_perms * (n + 1));
    let mut orders = Vec::with_capacity(n_perms);
    for _ in 0..n_perms {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut c = vec![false; n];
        perm_requests.push(c.clone());
        for &p in &order {
            c[p] = true;
            perm_requests.push(c.clone());
        }
        orders.push(order);
    }
    let perm_values = game.values(&perm_requests)?;
    let mut phi = vec![0.0; n];
    for (k, order) in orders.iter().enumerate() {
        let base = k * (n + 1);
        for (pos, &p) in order.iter().enumerate() {
            phi[p] += perm_values[base + pos + 1] - perm_values[base + pos];
        }
    }
    phi.iter_mut().for_each(|v| *v /= n_perms as f64);

    // Interactions: the SII weights are a distribution that picks the
    // coalition size uniformly from 0..=n-2 and the subset uniformly given
    // its size, so sizes are stratified and strata averaged.
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .collect();
    let per_pair = ((budget - budget / 2) / (4 * pairs.len())).max(1);
    let strata = n - 1;
    let mut requests = Vec::with_capacity(pairs.len() * per_pair * 4);
    let mut sample_sizes = Vec::with_capacity(pairs.len() * per_pair);
    for (pi, &(i, j)) in pairs.iter().enumerate() {
        let others: Vec<usize> = (0..n).filter(|p| *p != i && *p != j).collect();
        for r in 0..per_pair {
            let size = (r + pi) % strata;
            let mut s = vec![false; n];
            if size > 0 {
                for k in index::sample(&mut rng, others.len(), size) {
                    s[others[k]] = true;
                }
            }
            let mut si = s.clone();
            si[i] = true;
            let mut sj = s.clone();
            sj[j] = true;
            let mut sij = si.clone();
            sij[j] = true;
            requests.extend([sij, si, sj, s]);
            sample_sizes.push(size);
        }
    }
    let values = game.values(&requests)?;
    let mut pairwise = vec![vec![0.0; n]; n];
    for (pi, &(i, j)) in pairs.iter().enumerate() {
        let mut sums = vec![0.0; strata];
        let mut counts = vec![0usize; strata];
        for r in 0..per_pair {
            let k = pi * per_pair + r;
            let v = &values[4 * k..4 * k + 4];
            let size = sample_sizes[k];
            sums[size] += v[0] - v[1] - v[2] + v[3];
            counts[size] += 1;
        }
        let (total, used) = sums
            .iter()
            .zip(&counts)
            .filter(|(_, c)| **c > 0)
            .fold((0.0, 0usize), |(t, u), (s, c)| (t + s / *c as f64, u + 1));
        let est = total / used as f64;
        pairwise[i][j] = est;
        pairwise[j][i] = est;
    }
    Ok(InteractionValues {
        order: 2,
        main_effects: phi,
        pairwise,
    })
}

/// Pairwise Shapley interaction index over any game.
pub fn shap_interactions_on_game(
    game: &mut dyn Game,
    budget: usize,
    seed: u64,
    estimator: InteractionEstimator,
) -> Result<(InteractionValues, InteractionEstimator)> {
    let n = game.n_players();
    if n < 2 {
        return Err(Error::InvalidInput(
            "interactions need at least 2 tokens".into(),
        ));
    }
    let estimator = match estimator {
        InteractionEstimator::Auto if n <= MAX_EXACT_INTERACTION_PLAYERS => {
            InteractionEstimator::Exact
        }
        InteractionEstimator::Auto => InteractionEstimator::Sampling,
        other => other,
    };
    match estimator {
        InteractionEstimator::Exact => {
            if n > 20 {
                return Err(Error::InvalidInput(format!(
                    "{n} players is too many to enumerate"
                )));
            }
            Ok((exact_interactions(game)?, estimator))
        }
        _ => Ok((
            sampled_interactions(game, budget, seed)?,
            InteractionEstimator::Sampling,
        )),
    }
}
