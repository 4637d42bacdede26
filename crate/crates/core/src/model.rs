//! Shared domain types: market configuration, permutations, weights and ranks.
//!
//! Items are identified by their quality index `1..=N` (item `N` is the best).
//! A [`Permutation`] lists item ids in *increasing popularity*, so the natural
//! permutation `1, 2, …, N` is the one where popularity agrees with quality.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error, Result};

/// Tolerance for probability vectors summing to one.
pub const PROB_SUM_TOL: f64 = 1e-9;
/// Tolerance for normalized weight vectors summing to one.
pub const NORMALIZATION_TOL: f64 = 1e-12;
/// Two winning probabilities relatively closer than this are considered tied.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepetitionMode {
    /// The K inspected items are independent draws and may repeat.
    WithRepetition,
    /// The K inspected items are distinct; draws are renormalized over the remaining items.
    WithoutRepetition,
}

impl RepetitionMode {
    pub fn short_name(self) -> &'static str {
        match self {
            RepetitionMode::WithRepetition => "with-rep",
            RepetitionMode::WithoutRepetition => "without-rep",
        }
    }
}

impl fmt::Display for RepetitionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for RepetitionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "with-rep" | "with-repetition" | "with" => Ok(RepetitionMode::WithRepetition),
            "without-rep" | "without-repetition" | "without" => Ok(RepetitionMode::WithoutRepetition),
            other => Err(Error::Domain(format!("unknown repetition mode '{other}'"))),
        }
    }
}

/// A discrete distribution `{p_k}` over the discrimination power K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KDistributionRepr", into = "BTreeMap<usize, f64>")]
pub struct KDistribution {
    probs: BTreeMap<usize, f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum KDistributionRepr {
    Map(BTreeMap<String, f64>),
    /// Entry `k - 1` holds `p_k`.
    List(Vec<f64>),
}

impl TryFrom<KDistributionRepr> for KDistribution {
    type Error = ConfigError;

    fn try_from(repr: KDistributionRepr) -> Result<Self, ConfigError> {
        let probs = match repr {
            KDistributionRepr::Map(m) => m
                .into_iter()
                .map(|(k, p)| match k.trim().parse::<usize>() {
                    Ok(k) if k > 0 => Ok((k, p)),
                    _ => Err(ConfigError::InvalidKKey(k)),
                })
                .collect::<Result<_, _>>()?,
            KDistributionRepr::List(v) => v.into_iter().enumerate().map(|(i, p)| (i + 1, p)).collect(),
        };
        KDistribution::new(probs)
    }
}

impl From<KDistribution> for BTreeMap<usize, f64> {
    fn from(d: KDistribution) -> Self {
        d.probs
    }
}

impl KDistribution {
    /// Builds a distribution from `k -> p_k` pairs. Zero-mass entries are dropped.
    pub fn new(probs: BTreeMap<usize, f64>) -> Result<Self, ConfigError> {
        if let Some((&k, _)) = probs.iter().find(|(_, &p)| !(p >= 0.0 && p.is_finite())) {
            return Err(ConfigError::NegativeKMass { k });
        }
        if probs.contains_key(&0) {
            return Err(ConfigError::ZeroK);
        }
        let probs: BTreeMap<usize, f64> = probs.into_iter().filter(|&(_, p)| p > 0.0).collect();
        if probs.is_empty() {
            return Err(ConfigError::EmptyKDistribution);
        }
        let sum: f64 = probs.values().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(ConfigError::KDistributionSum { sum });
        }
        Ok(KDistribution { probs })
    }

    pub fn degenerate(k: usize) -> Self {
        KDistribution { probs: BTreeMap::from([(k, 1.0)]) }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probs.iter().map(|(&k, &p)| (k, p))
    }

    pub fn prob(&self, k: usize) -> f64 {
        self.probs.get(&k).copied().unwrap_or(0.0)
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.probs.keys().copied()
    }

    pub fn min_k(&self) -> usize {
        *self.probs.keys().next().expect("non-empty distribution")
    }

    pub fn max_k(&self) -> usize {
        *self.probs.keys().next_back().expect("non-empty distribution")
    }
}

/// How much quality users are able to discriminate: a fixed K or a distribution over K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Discrimination {
    Fixed(usize),
    Distribution(KDistribution),
}

impl Discrimination {
    pub fn as_distribution(&self) -> KDistribution {
        match self {
            Discrimination::Fixed(k) => KDistribution::degenerate(*k),
            Discrimination::Distribution(d) => d.clone(),
        }
    }

    pub fn max_k(&self) -> usize {
        match self {
            Discrimination::Fixed(k) => *k,
            Discrimination::Distribution(d) => d.max_k(),
        }
    }

    pub fn min_k(&self) -> usize {
        match self {
            Discrimination::Fixed(k) => *k,
            Discrimination::Distribution(d) => d.min_k(),
        }
    }
}

/// A class of users sharing one perception of quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserClass {
    pub class_probability: f64,
    /// Item ids listed from lowest to highest perceived quality.
    pub quality_order: Vec<usize>,
}

impl UserClass {
    pub fn identity(n: usize, probability: f64) -> Self {
        UserClass { class_probability: probability, quality_order: (1..=n).collect() }
    }
}

/// Full parameterization of one market experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    pub n_items: usize,
    pub alpha: f64,
    pub discrimination: Discrimination,
    pub repetition_mode: RepetitionMode,
    #[serde(default)]
    pub naive_fraction: f64,
    /// Empty means a single class with the natural quality order.
    #[serde(default)]
    pub classes: Vec<UserClass>,
    /// Empty means every item starts with weight 1.
    #[serde(default)]
    pub initial_weights: Vec<u64>,
}

impl MarketConfig {
    /// Single class, no naive users, unit initial weights.
    pub fn new(n_items: usize, k: usize, alpha: f64, mode: RepetitionMode) -> Self {
        MarketConfig {
            n_items,
            alpha,
            discrimination: Discrimination::Fixed(k),
            repetition_mode: mode,
            naive_fraction: 0.0,
            classes: vec![UserClass::identity(n_items, 1.0)],
            initial_weights: vec![1; n_items],
        }
    }

    pub fn with_k_distribution(mut self, dist: KDistribution) -> Self {
        self.discrimination = Discrimination::Distribution(dist);
        self
    }

    pub fn with_naive_fraction(mut self, f_m: f64) -> Self {
        self.naive_fraction = f_m;
        self
    }

    pub fn with_classes(mut self, classes: Vec<UserClass>) -> Self {
        self.classes = classes;
        self
    }

    pub fn with_initial_weights(mut self, weights: Vec<u64>) -> Self {
        self.initial_weights = weights;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.discrimination = Discrimination::Fixed(k);
        self
    }

    /// Fills the optional fields left empty in a deserialized document.
    pub fn fill_defaults(mut self) -> Self {
        if self.classes.is_empty() {
            self.classes = vec![UserClass::identity(self.n_items, 1.0)];
        }
        if self.initial_weights.is_empty() {
            self.initial_weights = vec![1; self.n_items];
        }
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: MarketConfig =
            serde_json::from_str(text).map_err(|e| Error::Domain(format!("malformed config document: {e}")))?;
        validate_config(&cfg.fill_defaults())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn k_distribution(&self) -> KDistribution {
        self.discrimination.as_distribution()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.n_items;
        if n == 0 {
            return Err(ConfigError::NoItems);
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(ConfigError::InvalidAlpha(self.alpha));
        }
        match &self.discrimination {
            Discrimination::Fixed(0) => return Err(ConfigError::ZeroK),
            Discrimination::Fixed(k) if *k > n => return Err(ConfigError::KExceedsN { k: *k, n }),
            Discrimination::Fixed(_) => {}
            Discrimination::Distribution(d) => {
                // re-check: the distribution may have been built by hand
                KDistribution::new(d.probs.clone())?;
                if d.max_k() > n {
                    return Err(ConfigError::KDistributionBeyondN { k: d.max_k(), n });
                }
            }
        }
        if !(0.0..=1.0).contains(&self.naive_fraction) {
            return Err(ConfigError::NaiveFraction(self.naive_fraction));
        }
        if self.classes.is_empty() {
            return Err(ConfigError::NoClasses);
        }
        for (c, class) in self.classes.iter().enumerate() {
            let p = class.class_probability;
            if !(p >= 0.0 && p.is_finite()) {
                return Err(ConfigError::NegativeClassProbability { class: c + 1 });
            }
            if !is_permutation_of(&class.quality_order, n) {
                return Err(ConfigError::NotAPermutation { class: c + 1, n });
            }
        }
        let sum: f64 = self.classes.iter().map(|c| c.class_probability).sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(ConfigError::ClassProbabilitySum { sum });
        }
        if self.initial_weights.len() != n || self.initial_weights.contains(&0) {
            return Err(ConfigError::InitialWeights { n });
        }
        Ok(())
    }
}

/// Returns `cfg` unchanged when every invariant holds.
pub fn validate_config(cfg: &MarketConfig) -> Result<MarketConfig> {
    cfg.validate()?;
    Ok(cfg.clone())
}

fn is_permutation_of(ids: &[usize], n: usize) -> bool {
    if ids.len() != n {
        return false;
    }
    let mut seen = vec![false; n + 1];
    for &id in ids {
        if id == 0 || id > n || seen[id] {
            return false;
        }
        seen[id] = true;
    }
    true
}

/// A popularity ordering of the items, listed from least to most popular.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(increasing_popularity: Vec<usize>) -> Result<Self> {
        let n = increasing_popularity.len();
        if n == 0 || !is_permutation_of(&increasing_popularity, n) {
            return Err(Error::Permutation(format!("{increasing_popularity:?} is not a permutation of 1..={n}")));
        }
        Ok(Permutation(increasing_popularity))
    }

    pub(crate) fn from_vec_unchecked(v: Vec<usize>) -> Self {
        debug_assert!(is_permutation_of(&v, v.len()));
        Permutation(v)
    }

    pub fn from_most_popular_first(mut order: Vec<usize>) -> Result<Self> {
        order.reverse();
        Permutation::new(order)
    }

    /// Popularity aligned with quality: `1, 2, …, N`.
    pub fn natural(n: usize) -> Self {
        Permutation((1..=n).collect())
    }

    /// The natural order with the two best items swapped: `1, …, N-2, N, N-1`.
    pub fn critical(n: usize) -> Self {
        let mut v: Vec<usize> = (1..=n).collect();
        if n >= 2 {
            v.swap(n - 2, n - 1);
        }
        Permutation(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_natural(&self) -> bool {
        self.0.iter().enumerate().all(|(j, &id)| id == j + 1)
    }

    /// Item ids in increasing popularity.
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn most_popular_first(&self) -> Vec<usize> {
        self.0.iter().rev().copied().collect()
    }

    /// The currently most popular item.
    pub fn top(&self) -> usize {
        *self.0.last().expect("non-empty permutation")
    }

    /// Popularity rank of every item (`1` = most popular), indexed by item id - 1.
    pub fn ranks(&self) -> RankVector {
        let n = self.0.len();
        let mut ranks = vec![0; n];
        for (j, &id) in self.0.iter().enumerate() {
            ranks[id - 1] = n - j;
        }
        RankVector { ranks }
    }

    /// Position of this permutation in the lexicographic order of all N! sequences.
    pub fn lex_index(&self) -> u64 {
        let n = self.0.len();
        let mut used = vec![false; n + 1];
        let mut index = 0u64;
        for (j, &id) in self.0.iter().enumerate() {
            let smaller_unused = (1..id).filter(|&x| !used[x]).count() as u64;
            index += smaller_unused * factorial(n - 1 - j);
            used[id] = true;
        }
        index
    }

    /// Inverse of [`Permutation::lex_index`].
    pub fn from_lex_index(n: usize, mut index: u64) -> Self {
        let mut remaining: Vec<usize> = (1..=n).collect();
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            let f = factorial(n - 1 - j);
            let pos = (index / f) as usize;
            index %= f;
            out.push(remaining.remove(pos));
        }
        Permutation(out)
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Permutation::new(v)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.0
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|id| id.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for Permutation {
    type Err = Error;

    /// Parses comma-separated ids, optionally wrapped in braces: `{1,2,4,3}`.
    fn from_str(s: &str) -> Result<Self> {
        let inner = s.trim().trim_start_matches('{').trim_end_matches('}');
        let ids = inner
            .split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|_| Error::Permutation(format!("bad item id '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        Permutation::new(ids)
    }
}

pub fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

/// Popularity weights after some number of rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub round: u64,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>, round: u64) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Domain("weights must be positive and finite".into()));
        }
        Ok(WeightVector { weights, round })
    }

    pub fn from_counts(counts: &[u64], round: u64) -> Result<Self> {
        WeightVector::new(counts.iter().map(|&c| c as f64).collect(), round)
    }

    pub fn normalized(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }
}

/// `ranks[i]` is the popularity rank of item `i + 1`; 1 = most popular.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankVector {
    pub ranks: Vec<usize>,
}

impl RankVector {
    pub fn new(ranks: Vec<usize>) -> Result<Self> {
        let n = ranks.len();
        if n == 0 || ranks.iter().any(|&r| r == 0 || r > n) {
            return Err(Error::Domain(format!("ranks must lie in 1..={n}")));
        }
        Ok(RankVector { ranks })
    }

    pub fn rank(&self, item: usize) -> usize {
        self.ranks[item - 1]
    }

    pub fn is_strict(&self) -> bool {
        is_permutation_of(&self.ranks, self.ranks.len())
    }
}

/// `r_i` = number of items whose weight is at least `w_i`, so tied items share the largest rank.
pub fn compute_ranks(w: &WeightVector) -> RankVector {
    let mut sorted = w.weights.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let ranks = w.weights.iter().map(|wi| n - sorted.partition_point(|x| x < wi)).collect();
    RankVector { ranks }
}

/// Strict popularity order: descending weight, ties broken by ascending item id
/// (the lower id counts as more popular).
pub fn rank_with_tiebreak(w: &WeightVector) -> Permutation {
    let mut order: Vec<usize> = (1..=w.weights.len()).collect();
    order.sort_by(|&a, &b| w.weights[b - 1].total_cmp(&w.weights[a - 1]).then(a.cmp(&b)));
    Permutation::from_most_popular_first(order).expect("sorted ids form a permutation")
}

/// Orders items by winning probability, as the B-map does.
///
/// Items with zero winning probability never win, so their weights stay frozen and
/// their normalized weights vanish; they are placed at the bottom in natural order.
/// Positive entries are sorted descending; entries within relative distance `tol`
/// of their neighbour (`|x - y| ≤ tol · max(x, y)`) form a tie cluster ordered by ascending id. Returns the permutation and whether
/// any positive entries were tied.
pub fn rank_win_probs(b: &[f64], tol: f64) -> (Permutation, bool) {
    let mut positive: Vec<usize> = (1..=b.len()).filter(|&i| b[i - 1] > 0.0).collect();
    positive.sort_by(|&x, &y| b[y - 1].total_cmp(&b[x - 1]).then(x.cmp(&y)));
    let mut has_tie = false;
    let mut start = 0;
    while start < positive.len() {
        let mut end = start + 1;
        while end < positive.len() && {
            let (x, y) = (b[positive[end - 1] - 1], b[positive[end] - 1]);
            x - y <= tol * x
        } {
            end += 1;
        }
        if end - start > 1 {
            has_tie = true;
            positive[start..end].sort_unstable();
        }
        start = end;
    }
    let mut increasing: Vec<usize> = (1..=b.len()).filter(|&i| b[i - 1] <= 0.0).collect();
    increasing.extend(positive.iter().rev());
    (Permutation(increasing), has_tie)
}

/// Per-item winning probabilities, indexed by item id - 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinProbVector {
    pub probs: Vec<f64>,
}

impl WinProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::Domain("winning probabilities must be non-negative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::Domain(format!("winning probabilities sum to {sum}")));
        }
        Ok(WinProbVector { probs })
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= PROB_SUM_TOL);
        WinProbVector { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Winning probability of item `item` (1-based).
    pub fn get(&self, item: usize) -> f64 {
        self.probs[item - 1]
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Whether two positive entries coincide within relative distance `tol`.
    pub fn has_tie(&self, tol: f64) -> bool {
        rank_win_probs(&self.probs, tol).1
    }
}
