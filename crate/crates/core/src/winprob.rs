//! Selection and winning probabilities.
//!
//! All winning-probability vectors are indexed by item id (quality order);
//! popularity only enters through the rank-based selection probabilities
//! `p_i ∝ r_i^{-α}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{KDistribution, MarketConfig, Permutation, RankVector, RepetitionMode, WinProbVector};

/// Default cap on the number of terms evaluated by the without-repetition engine.
pub const DEFAULT_ENUM_BUDGET: u128 = 100_000_000;

/// Environment variable overriding [`DEFAULT_ENUM_BUDGET`].
pub const ENUM_BUDGET_ENV: &str = "POPDYN_MAX_ENUM";

/// The enumeration budget in effect, honoring `POPDYN_MAX_ENUM` when it parses.
pub fn enum_budget() -> u128 {
    std::env::var(ENUM_BUDGET_ENV).ok().and_then(|v| v.trim().parse::<u128>().ok()).unwrap_or(DEFAULT_ENUM_BUDGET)
}

/// Compensated (Neumaier) sum, accumulated in iteration order.
pub(crate) fn stable_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `G = Σ_{i=1}^{N} i^{-α}`, summed in ascending `i`.
pub fn rank_normalizer(n: usize, alpha: f64) -> f64 {
    stable_sum((1..=n).map(|i| (i as f64).powf(-alpha)))
}

/// Selection probability of the item holding rank `r`, stored at index `r - 1`.
pub fn rank_selection_probs(n: usize, alpha: f64) -> Vec<f64> {
    let g = rank_normalizer(n, alpha);
    (1..=n).map(|r| (r as f64).powf(-alpha) / g).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionProbVector {
    /// `p_i` for item `i`, at index `i - 1`.
    pub probs: Vec<f64>,
    /// `s_i = Σ_{j ≤ i} p_j` in quality order; `s_N = 1`.
    pub cumulants: Vec<f64>,
}

impl SelectionProbVector {
    fn from_probs(probs: Vec<f64>) -> Self {
        let mut cumulants = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cumulants.push(acc);
        }
        if let Some(last) = cumulants.last_mut() {
            *last = 1.0;
        }
        SelectionProbVector { probs, cumulants }
    }
}

/// `p_i = r_i^{-α} / Σ_j r_j^{-α}` for the ranks induced by `perm`.
pub fn selection_probs(perm: &Permutation, alpha: f64) -> SelectionProbVector {
    SelectionProbVector::from_probs(item_selection_probs(perm, &rank_selection_probs(perm.len(), alpha)))
}

fn item_selection_probs(perm: &Permutation, by_rank: &[f64]) -> Vec<f64> {
    let n = perm.len();
    let mut p = vec![0.0; n];
    for (j, &item) in perm.as_slice().iter().enumerate() {
        p[item - 1] = by_rank[n - 1 - j];
    }
    p
}

/// Uniform pre-selection of K distinct items: `b_i = C(i-1, K-1) / C(N, K)` for `i ≥ K`.
pub fn win_probs_uniform(n: usize, k: usize) -> Result<WinProbVector> {
    if k == 0 || k > n {
        return Err(Error::Domain(format!("uniform pre-selection needs 1 ≤ K ≤ N (K = {k}, N = {n})")));
    }
    // b_N = K/N and b_{i-1} = b_i (i-K)/(i-1)
    let mut b = vec![0.0; n];
    b[n - 1] = k as f64 / n as f64;
    for i in (k + 1..=n).rev() {
        b[i - 2] = b[i - 1] * (i - k) as f64 / (i - 1) as f64;
    }
    Ok(WinProbVector::from_raw(b))
}

/// With repetition: `b_i = s_i^K - s_{i-1}^K` over quality-ordered cumulants.
pub fn win_probs_with_rep(perm: &Permutation, alpha: f64, k: usize) -> Result<WinProbVector> {
    if k == 0 {
        return Err(Error::Domain("K must be at least 1".into()));
    }
    let p = item_selection_probs(perm, &rank_selection_probs(perm.len(), alpha));
    let identity: Vec<usize> = (1..=perm.len()).collect();
    let mut b = vec![0.0; perm.len()];
    accumulate_with_rep(&p, &identity, k, 1.0, &mut b);
    Ok(WinProbVector::from_raw(b))
}

/// Adds `weight · b` for the class whose quality order (lowest first) is `order`.
fn accumulate_with_rep(p: &[f64], order: &[usize], k: usize, weight: f64, out: &mut [f64]) {
    let n = order.len();
    let k = k as i32;
    let mut prev_pow = 0.0;
    let mut cum = 0.0;
    for (i, &item) in order.iter().enumerate() {
        cum += p[item - 1];
        let s = if i + 1 == n { 1.0 } else { cum.min(1.0) };
        let pow = s.powi(k);
        out[item - 1] += weight * (pow - prev_pow);
        prev_pow = pow;
    }
}

/// Without repetition, by exact enumeration of the pre-selection process.
pub fn win_probs_without_rep(perm: &Permutation, alpha: f64, k: usize) -> Result<WinProbVector> {
    let n = perm.len();
    if k == 0 || k > n {
        return Err(Error::Domain(format!("without repetition needs 1 ≤ K ≤ N (K = {k}, N = {n})")));
    }
    let p = item_selection_probs(perm, &rank_selection_probs(n, alpha));
    let table = SubsetTable::build(&p, k, enum_budget())?;
    let quality: Vec<usize> = (1..=n).collect();
    let mut b = vec![0.0; n];
    table.accumulate(k, &quality, 1.0, &mut b);
    Ok(WinProbVector::from_raw(b))
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // exact while it fits: acc * (n - i) is divisible by i + 1
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i + 1) as u128,
            None => return u128::MAX,
        };
    }
    acc
}

/// Number of terms the without-repetition engine evaluates for draws of up to `k_max` items.
pub fn without_rep_cost(n: usize, k_max: usize) -> u128 {
    (1..=k_max).fold(0u128, |acc, k| acc.saturating_add(binomial(n, k).saturating_mul(k as u128)))
}

/// Probability that the first `k` draws without replacement are exactly the set `S`,
/// for every `S` with `|S| ≤ k_max`.
///
/// An ordered pre-selection's probability is a product of renormalized terms whose
/// denominators depend only on the set already drawn, so the per-sequence products
/// share prefixes and can be memoized per subset. Subsets at each level are stored
/// in colexicographic order.
struct SubsetTable {
    n: usize,
    levels: Vec<Vec<f64>>,
    binom: Vec<Vec<usize>>,
}

impl SubsetTable {
    fn build(p: &[f64], k_max: usize, budget: u128) -> Result<Self> {
        let n = p.len();
        if n > 63 {
            return Err(Error::Domain("without-repetition enumeration supports N ≤ 63".into()));
        }
        let required = without_rep_cost(n, k_max);
        if required > budget {
            return Err(Error::BudgetExceeded { required, budget });
        }
        let mut binom = vec![vec![0usize; k_max + 2]; n + 1];
        for (m, row) in binom.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = binomial(m, j) as usize;
            }
        }
        let mut levels: Vec<Vec<f64>> = vec![vec![1.0]];
        let mut members = Vec::with_capacity(k_max);
        for k in 1..=k_max {
            let prev = &levels[k - 1];
            let mut level = vec![0.0; binom[n][k]];
            let mut mask: u64 = (1u64 << k) - 1;
            let limit: u64 = 1u64 << n;
            let mut idx = 0usize;
            while mask < limit {
                members.clear();
                members.extend((0..n).filter(|&i| mask >> i & 1 == 1));
                let rest = stable_sum((0..n).filter(|&i| mask >> i & 1 == 0).map(|i| p[i]));
                let mut f = 0.0;
                for s in 0..k {
                    let j = members[s];
                    let mut sub_idx = 0usize;
                    for (t, &c) in members.iter().enumerate() {
                        if t < s {
                            sub_idx += binom[c][t + 1];
                        } else if t > s {
                            sub_idx += binom[c][t];
                        }
                    }
                    f += prev[sub_idx] * p[j] / (rest + p[j]);
                }
                level[idx] = f;
                idx += 1;
                // Gosper's hack: next k-subset in increasing numeric (colex) order
                let c = mask & mask.wrapping_neg();
                let r = mask + c;
                mask = (((r ^ mask) >> 2) / c) | r;
            }
            levels.push(level);
        }
        Ok(SubsetTable { n, levels, binom })
    }

    /// Adds `weight · P(item wins)` where the winner of a draw set is the member
    /// with the highest `quality[item - 1]`.
    fn accumulate(&self, k: usize, quality: &[usize], weight: f64, out: &mut [f64]) {
        let n = self.n;
        let level = &self.levels[k];
        let mut mask: u64 = (1u64 << k) - 1;
        let limit: u64 = 1u64 << n;
        let mut idx = 0usize;
        while mask < limit {
            let mut best = usize::MAX;
            let mut best_q = 0usize;
            let mut m = mask;
            while m != 0 {
                let i = m.trailing_zeros() as usize;
                if quality[i] > best_q {
                    best_q = quality[i];
                    best = i;
                }
                m &= m - 1;
            }
            out[best] += weight * level[idx];
            idx += 1;
            let c = mask & mask.wrapping_neg();
            let r = mask + c;
            mask = (((r ^ mask) >> 2) / c) | r;
        }
        debug_assert_eq!(idx, self.binom[n][k]);
    }
}

/// Probability that the recommender presents `sequence` (in that order) when
/// drawing without replacement proportionally to `r^{-α}`.
pub fn preselection_sequence_prob(ranks: &RankVector, sequence: &[usize], alpha: f64) -> Result<f64> {
    let n = ranks.ranks.len();
    let mut drawn = vec![false; n];
    for &item in sequence {
        if item == 0 || item > n || drawn[item - 1] {
            return Err(Error::Domain(format!("sequence {sequence:?} must hold distinct ids in 1..={n}")));
        }
        drawn[item - 1] = true;
    }
    let weight = |item: usize| (ranks.rank(item) as f64).powf(-alpha);
    let mut remaining: Vec<usize> = (1..=n).collect();
    let mut prob = 1.0;
    for &item in sequence {
        let total = stable_sum(remaining.iter().map(|&i| weight(i)));
        prob *= weight(item) / total;
        remaining.retain(|&i| i != item);
    }
    Ok(prob)
}

/// `b̂_i = f_m [i = top] + (1 - f_m) b_i`.
pub fn blend_naive(b: &WinProbVector, current_top: usize, f_m: f64) -> Result<WinProbVector> {
    if !(0.0..=1.0).contains(&f_m) {
        return Err(Error::Domain(format!("naive fraction {f_m} outside [0, 1]")));
    }
    if current_top == 0 || current_top > b.len() {
        return Err(Error::Domain(format!("item {current_top} does not exist")));
    }
    let mut out: Vec<f64> = b.probs.iter().map(|x| (1.0 - f_m) * x).collect();
    out[current_top - 1] += f_m;
    Ok(WinProbVector::from_raw(out))
}

/// `b_i = Σ_k p_k b_i(k)`.
pub fn blend_k_distribution(per_k: &BTreeMap<usize, WinProbVector>, p_k: &KDistribution) -> Result<WinProbVector> {
    if p_k.support().any(|k| !per_k.contains_key(&k)) || per_k.keys().any(|&k| k == 0) {
        return Err(Error::SupportMismatch);
    }
    let n = per_k.values().next().map(WinProbVector::len).ok_or(Error::SupportMismatch)?;
    if per_k.values().any(|b| b.len() != n) {
        return Err(Error::SupportMismatch);
    }
    let mut out = vec![0.0; n];
    for (k, pk) in p_k.iter() {
        for (o, x) in out.iter_mut().zip(&per_k[&k].probs) {
            *o += pk * x;
        }
    }
    Ok(WinProbVector::from_raw(out))
}

/// Winning probabilities for an arbitrary validated configuration: user classes,
/// K distribution and naive users.
pub fn win_probs_multiclass(perm: &Permutation, cfg: &MarketConfig) -> Result<WinProbVector> {
    MarketModel::new(cfg)?.win_probs(perm)
}

/// A validated configuration with the per-configuration constants precomputed,
/// used wherever the B-map is evaluated many times.
#[derive(Debug, Clone)]
pub struct MarketModel {
    cfg: MarketConfig,
    by_rank: Vec<f64>,
    /// `quality[c][i]` is the perceived quality position (1..=N) of item `i + 1` in class `c`.
    quality: Vec<Vec<usize>>,
    k_dist: KDistribution,
    budget: u128,
}

impl MarketModel {
    pub fn new(cfg: &MarketConfig) -> Result<Self> {
        Self::with_budget(cfg, enum_budget())
    }

    pub fn with_budget(cfg: &MarketConfig, budget: u128) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_items;
        let k_dist = cfg.k_distribution();
        if cfg.repetition_mode == RepetitionMode::WithoutRepetition {
            let required = without_rep_cost(n, k_dist.max_k());
            if required > budget {
                return Err(Error::BudgetExceeded { required, budget });
            }
        }
        let quality = cfg
            .classes
            .iter()
            .map(|class| {
                let mut q = vec![0; n];
                for (pos, &item) in class.quality_order.iter().enumerate() {
                    q[item - 1] = pos + 1;
                }
                q
            })
            .collect();
        Ok(MarketModel { by_rank: rank_selection_probs(n, cfg.alpha), cfg: cfg.clone(), quality, k_dist, budget })
    }

    pub fn config(&self) -> &MarketConfig {
        &self.cfg
    }

    pub fn n_items(&self) -> usize {
        self.cfg.n_items
    }

    /// Selection probability by rank (index `r - 1`).
    pub fn rank_probs(&self) -> &[f64] {
        &self.by_rank
    }

    /// Perceived quality position of each item for class `c`.
    pub fn class_quality(&self, c: usize) -> &[usize] {
        &self.quality[c]
    }

    pub fn selection_probs(&self, perm: &Permutation) -> Vec<f64> {
        item_selection_probs(perm, &self.by_rank)
    }

    fn check_perm(&self, perm: &Permutation) -> Result<()> {
        if perm.len() != self.cfg.n_items {
            return Err(Error::Permutation(format!(
                "permutation of {} items used with N = {}",
                perm.len(),
                self.cfg.n_items
            )));
        }
        Ok(())
    }

    /// Winning probabilities seen by each user class (each sums to one), naive users included.
    pub fn class_win_probs(&self, perm: &Permutation) -> Result<Vec<WinProbVector>> {
        self.check_perm(perm)?;
        let n = self.cfg.n_items;
        let p = self.selection_probs(perm);
        let mut per_class = vec![vec![0.0; n]; self.cfg.classes.len()];
        match self.cfg.repetition_mode {
            RepetitionMode::WithRepetition => {
                for (c, class) in self.cfg.classes.iter().enumerate() {
                    for (k, pk) in self.k_dist.iter() {
                        accumulate_with_rep(&p, &class.quality_order, k, pk, &mut per_class[c]);
                    }
                }
            }
            RepetitionMode::WithoutRepetition => {
                let table = SubsetTable::build(&p, self.k_dist.max_k(), self.budget)?;
                for (c, out) in per_class.iter_mut().enumerate() {
                    for (k, pk) in self.k_dist.iter() {
                        table.accumulate(k, &self.quality[c], pk, out);
                    }
                }
            }
        }
        let f_m = self.cfg.naive_fraction;
        let top = perm.top();
        Ok(per_class
            .into_iter()
            .map(|mut b| {
                if f_m > 0.0 {
                    b.iter_mut().for_each(|x| *x *= 1.0 - f_m);
                    b[top - 1] += f_m;
                }
                WinProbVector::from_raw(b)
            })
            .collect())
    }

    /// Average quality as perceived by the users: `Σ_c f_c Σ_x q_c(x) b_{x,c}`.
    /// With a single identity class this is `Σ_i i b_i`.
    pub fn perceived_average_quality(&self, perm: &Permutation) -> Result<f64> {
        let per_class = self.class_win_probs(perm)?;
        Ok(self
            .cfg
            .classes
            .iter()
            .zip(&per_class)
            .enumerate()
            .map(|(c, (class, b))| {
                class.class_probability * b.probs.iter().zip(&self.quality[c]).map(|(x, &q)| q as f64 * x).sum::<f64>()
            })
            .sum())
    }

    /// Overall winning probabilities `b_i = Σ_c f_c b_{i,c}`.
    pub fn win_probs(&self, perm: &Permutation) -> Result<WinProbVector> {
        self.check_perm(perm)?;
        let n = self.cfg.n_items;
        let p = self.selection_probs(perm);
        let mut b = vec![0.0; n];
        match self.cfg.repetition_mode {
            RepetitionMode::WithRepetition => {
                for class in &self.cfg.classes {
                    for (k, pk) in self.k_dist.iter() {
                        accumulate_with_rep(&p, &class.quality_order, k, class.class_probability * pk, &mut b);
                    }
                }
            }
            RepetitionMode::WithoutRepetition => {
                let table = SubsetTable::build(&p, self.k_dist.max_k(), self.budget)?;
                for (c, class) in self.cfg.classes.iter().enumerate() {
                    for (k, pk) in self.k_dist.iter() {
                        table.accumulate(k, &self.quality[c], class.class_probability * pk, &mut b);
                    }
                }
            }
        }
        let f_m = self.cfg.naive_fraction;
        if f_m > 0.0 {
            b.iter_mut().for_each(|x| *x *= 1.0 - f_m);
            b[perm.top() - 1] += f_m;
        }
        Ok(WinProbVector::from_raw(b))
    }
}
