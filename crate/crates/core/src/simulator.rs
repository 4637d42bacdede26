//! Seeded Monte Carlo of the urn dynamics: every round one user inspects K
//! items drawn by popularity rank and the best of them (in the user's
//! perception) gains one unit of weight.
//!
//! Randomness comes from ChaCha8 seeded with the 64-bit master seed; run `i`
//! uses stream `i`, so runs are reproducible and independent of scheduling.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::StablePointSet;
use crate::error::{Error, Result};
use crate::model::{rank_with_tiebreak, MarketConfig, Permutation, RepetitionMode, WeightVector};
use crate::winprob::MarketModel;

/// Rejection attempts before falling back to an explicit scan when drawing
/// without replacement.
const REJECTION_TRIES: usize = 8;

/// Generator for run `stream` of a seeded experiment.
pub fn run_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointSchedule {
    /// 1, 2, 5, 10, 20, 50, … plus the final round.
    #[default]
    Log125,
    /// Every `n` rounds plus the final round.
    Every(u64),
    Explicit(Vec<u64>),
    /// Only the final round.
    FinalOnly,
}

impl CheckpointSchedule {
    /// Sorted, de-duplicated checkpoint rounds in `1..=rounds`, always ending at `rounds`.
    pub fn rounds(&self, rounds: u64) -> Vec<u64> {
        let mut out: Vec<u64> = match self {
            CheckpointSchedule::Log125 => {
                let mut v = Vec::new();
                let mut decade = 1u64;
                'outer: loop {
                    for m in [1, 2, 5] {
                        match decade.checked_mul(m) {
                            Some(r) if r <= rounds => v.push(r),
                            _ => break 'outer,
                        }
                    }
                    decade = match decade.checked_mul(10) {
                        Some(d) => d,
                        None => break,
                    };
                }
                v
            }
            CheckpointSchedule::Every(step) => {
                let step = (*step).max(1);
                (1..=rounds / step).map(|i| i * step).collect()
            }
            CheckpointSchedule::Explicit(v) => v.iter().copied().filter(|&r| r >= 1 && r <= rounds).collect(),
            CheckpointSchedule::FinalOnly => Vec::new(),
        };
        out.push(rounds);
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub round: u64,
    pub weights: Vec<u64>,
    pub normalized: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrnTrace {
    pub config: MarketConfig,
    pub seed: u64,
    pub stream: u64,
    pub rounds: u64,
    pub checkpoints: Vec<Checkpoint>,
    pub final_permutation: Permutation,
    /// First round from which the popularity order matched a stable point
    /// and kept matching until the end of the run.
    pub hit_round: Option<u64>,
    pub hit_point: Option<Permutation>,
    /// First round at which the order matched a stable point at all.
    #[serde(default)]
    pub first_hit_round: Option<u64>,
}

/// One CSV row of a trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub round: u64,
    pub item_id: usize,
    pub weight: u64,
    pub normalized_weight: f64,
}

impl UrnTrace {
    pub fn rows(&self) -> impl Iterator<Item = TraceRow> + '_ {
        self.checkpoints.iter().flat_map(|c| {
            c.weights.iter().zip(&c.normalized).enumerate().map(move |(i, (&w, &x))| TraceRow {
                round: c.round,
                item_id: i + 1,
                weight: w,
                normalized_weight: x,
            })
        })
    }

    pub fn final_weights(&self) -> &[u64] {
        &self.checkpoints.last().expect("the final round is always recorded").weights
    }
}

/// Draws the winner of one competition given the current popularity order.
#[derive(Debug, Clone)]
pub struct RoundSampler {
    n: usize,
    mode: RepetitionMode,
    naive_fraction: f64,
    by_rank: Vec<f64>,
    rank_dist: WeightedIndex<f64>,
    ks: Vec<usize>,
    k_dist: Option<WeightedIndex<f64>>,
    class_dist: Option<WeightedIndex<f64>>,
    quality: Vec<Vec<usize>>,
}

/// Per-round scratch space.
#[derive(Debug, Clone)]
pub struct Scratch {
    drawn: Vec<bool>,
    picks: Vec<usize>,
}

impl RoundSampler {
    pub fn new(cfg: &MarketConfig) -> Result<Self> {
        // validates the configuration and precomputes the rank law and class perceptions
        let model = MarketModel::with_budget(cfg, u128::MAX)?;
        let n = cfg.n_items;
        let by_rank = model.rank_probs().to_vec();
        let rank_dist = WeightedIndex::new(&by_rank).map_err(|e| Error::Domain(e.to_string()))?;
        let kd = cfg.k_distribution();
        let ks: Vec<usize> = kd.support().collect();
        let k_dist = if ks.len() > 1 {
            Some(WeightedIndex::new(kd.iter().map(|(_, p)| p)).map_err(|e| Error::Domain(e.to_string()))?)
        } else {
            None
        };
        let class_dist = if cfg.classes.len() > 1 {
            Some(
                WeightedIndex::new(cfg.classes.iter().map(|c| c.class_probability))
                    .map_err(|e| Error::Domain(e.to_string()))?,
            )
        } else {
            None
        };
        let quality = (0..cfg.classes.len()).map(|c| model.class_quality(c).to_vec()).collect();
        Ok(RoundSampler {
            n,
            mode: cfg.repetition_mode,
            naive_fraction: cfg.naive_fraction,
            by_rank,
            rank_dist,
            ks,
            k_dist,
            class_dist,
            quality,
        })
    }

    pub fn scratch(&self) -> Scratch {
        Scratch { drawn: vec![false; self.n], picks: Vec::with_capacity(self.n) }
    }

    /// Winner of one competition; `order` lists items most popular first.
    pub fn winner<R: Rng>(&self, rng: &mut R, order: &[usize], scratch: &mut Scratch) -> usize {
        if self.naive_fraction > 0.0 && rng.gen::<f64>() < self.naive_fraction {
            return order[0];
        }
        let class = self.class_dist.as_ref().map_or(0, |d| d.sample(rng));
        let k = self.k_dist.as_ref().map_or(self.ks[0], |d| self.ks[d.sample(rng)]);
        let quality = &self.quality[class];
        let mut best = 0usize;
        let mut best_q = 0usize;
        match self.mode {
            RepetitionMode::WithRepetition => {
                for _ in 0..k {
                    let item = order[self.rank_dist.sample(rng)];
                    if quality[item - 1] > best_q {
                        best_q = quality[item - 1];
                        best = item;
                    }
                }
            }
            RepetitionMode::WithoutRepetition => {
                self.draw_distinct(rng, k, scratch);
                for &r in &scratch.picks {
                    let item = order[r];
                    if quality[item - 1] > best_q {
                        best_q = quality[item - 1];
                        best = item;
                    }
                }
                for &r in &scratch.picks {
                    scratch.drawn[r] = false;
                }
            }
        }
        best
    }

    /// Sequential draws of `k` distinct rank positions with renormalized probabilities.
    fn draw_distinct<R: Rng>(&self, rng: &mut R, k: usize, scratch: &mut Scratch) {
        scratch.picks.clear();
        let mut taken_mass = 0.0f64;
        for _ in 0..k {
            let mut pick = None;
            for _ in 0..REJECTION_TRIES {
                let r = self.rank_dist.sample(rng);
                if !scratch.drawn[r] {
                    pick = Some(r);
                    break;
                }
            }
            let r = pick.unwrap_or_else(|| {
                let mut u = rng.gen::<f64>() * (1.0 - taken_mass).max(0.0);
                let mut last = usize::MAX;
                for r in 0..self.n {
                    if scratch.drawn[r] {
                        continue;
                    }
                    last = r;
                    u -= self.by_rank[r];
                    if u < 0.0 {
                        return r;
                    }
                }
                last
            });
            scratch.drawn[r] = true;
            scratch.picks.push(r);
            taken_mass += self.by_rank[r];
        }
    }
}

/// Popularity order kept sorted by (weight desc, id asc) as weights grow.
#[derive(Debug, Clone)]
struct Urn {
    weights: Vec<u64>,
    order: Vec<usize>,
    pos: Vec<usize>,
}

impl Urn {
    fn new(initial: &[u64]) -> Result<Self> {
        let w = WeightVector::from_counts(initial, 0)?;
        let order = rank_with_tiebreak(&w).most_popular_first();
        let mut pos = vec![0; initial.len()];
        for (p, &item) in order.iter().enumerate() {
            pos[item - 1] = p;
        }
        Ok(Urn { weights: initial.to_vec(), order, pos })
    }

    /// Adds one unit to `item`; returns whether the order changed.
    fn win(&mut self, item: usize) -> bool {
        self.weights[item - 1] += 1;
        let w = self.weights[item - 1];
        let mut p = self.pos[item - 1];
        let start = p;
        while p > 0 {
            let above = self.order[p - 1];
            let wa = self.weights[above - 1];
            if wa < w || (wa == w && above > item) {
                self.order[p] = above;
                self.pos[above - 1] = p;
                p -= 1;
            } else {
                break;
            }
        }
        self.order[p] = item;
        self.pos[item - 1] = p;
        p != start
    }

    fn checkpoint(&self, round: u64) -> Checkpoint {
        let total: u64 = self.weights.iter().sum();
        Checkpoint {
            round,
            weights: self.weights.clone(),
            normalized: self.weights.iter().map(|&w| w as f64 / total as f64).collect(),
        }
    }
}

/// Targets for hit detection: each stable point's most-popular-first prefix of
/// items that can win (items with zero winning probability never move).
#[derive(Debug, Clone)]
struct HitTargets {
    prefixes: Vec<(Permutation, Vec<usize>)>,
}

impl HitTargets {
    fn new(set: &StablePointSet) -> Self {
        let prefixes = set
            .points
            .iter()
            .map(|p| {
                let active = p.b.probs.iter().filter(|&&x| x > 0.0).count();
                let mpf = p.perm.most_popular_first();
                (p.perm.clone(), mpf[..active].to_vec())
            })
            .collect();
        HitTargets { prefixes }
    }

    fn matching(&self, order: &[usize]) -> Option<usize> {
        self.prefixes.iter().position(|(_, pre)| order.starts_with(pre))
    }
}

fn run_once(
    sampler: &RoundSampler,
    cfg: &MarketConfig,
    rounds: u64,
    seed: u64,
    stream: u64,
    schedule: &[u64],
    targets: Option<&HitTargets>,
) -> Result<UrnTrace> {
    let mut rng = run_rng(seed, stream);
    let mut urn = Urn::new(&cfg.initial_weights)?;
    let mut scratch = sampler.scratch();
    let mut checkpoints = Vec::with_capacity(schedule.len());
    let mut next_cp = 0;
    let mut current = targets.and_then(|t| t.matching(&urn.order));
    let mut since: Option<u64> = current.map(|_| 0);
    let mut first = since;
    for round in 1..=rounds {
        let item = sampler.winner(&mut rng, &urn.order, &mut scratch);
        if urn.win(item) {
            if let Some(t) = targets {
                let now = t.matching(&urn.order);
                if now != current {
                    current = now;
                    since = now.map(|_| round);
                    first = first.or(since);
                }
            }
        }
        if next_cp < schedule.len() && schedule[next_cp] == round {
            checkpoints.push(urn.checkpoint(round));
            next_cp += 1;
        }
    }
    let hit_point = match (targets, current) {
        (Some(t), Some(i)) => Some(t.prefixes[i].0.clone()),
        _ => None,
    };
    Ok(UrnTrace {
        config: cfg.clone(),
        seed,
        stream,
        rounds,
        checkpoints,
        final_permutation: Permutation::from_most_popular_first(urn.order)?,
        hit_round: since,
        hit_point,
        first_hit_round: first,
    })
}

/// A single seeded run (stream 0).
pub fn simulate_run(cfg: &MarketConfig, rounds: u64, seed: u64, schedule: &CheckpointSchedule) -> Result<UrnTrace> {
    simulate_run_stream(cfg, rounds, seed, 0, schedule, None)
}

/// A run on an explicit stream, optionally tracking when a stable point is reached.
pub fn simulate_run_stream(
    cfg: &MarketConfig,
    rounds: u64,
    seed: u64,
    stream: u64,
    schedule: &CheckpointSchedule,
    stable: Option<&StablePointSet>,
) -> Result<UrnTrace> {
    if rounds == 0 {
        return Err(Error::Domain("a run needs at least one round".into()));
    }
    let sampler = RoundSampler::new(cfg)?;
    let targets = stable.map(HitTargets::new);
    run_once(&sampler, cfg, rounds, seed, stream, &schedule.rounds(rounds), targets.as_ref())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatistics {
    pub n_runs: usize,
    pub rounds: u64,
    pub seed: u64,
    /// Share of all competitions won by each item.
    pub win_frequencies: Vec<f64>,
    pub win_std_errors: Vec<f64>,
    /// Share of runs ending with `w_K < w_{K+1} < … < w_N` (K the smallest inspection size).
    pub ordered_fraction: f64,
    /// How often each item ended as the most popular.
    pub final_top_counts: Vec<usize>,
    /// Runs ending on each stable point (reach-and-hold), in stable-set order.
    pub hit_counts: Vec<(Permutation, usize)>,
    /// Per-run hit rounds, `None` when no stable point was reached and held.
    pub hit_rounds: Vec<Option<u64>>,
    /// Median over all runs, counting unconverged runs as later than any hit;
    /// `None` when at least half the runs did not converge.
    pub median_hit_round: Option<f64>,
    pub unconverged: usize,
    /// Median of the first-match rounds (no holding required), same convention.
    #[serde(default)]
    pub median_first_hit_round: Option<f64>,
}

fn median_with_unconverged(samples: &[Option<u64>]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut hits: Vec<u64> = samples.iter().flatten().copied().collect();
    hits.sort_unstable();
    let n = samples.len();
    let at = |i: usize| hits.get(i).map(|&v| v as f64);
    if n % 2 == 1 {
        at(n / 2)
    } else {
        Some((at(n / 2 - 1)? + at(n / 2)?) / 2.0)
    }
}

/// Runs `n_runs` independent streams and aggregates their statistics.
pub fn run_experiment(
    cfg: &MarketConfig,
    rounds: u64,
    n_runs: usize,
    seed: u64,
    stable: Option<&StablePointSet>,
) -> Result<(RunStatistics, Vec<UrnTrace>)> {
    if n_runs == 0 || rounds == 0 {
        return Err(Error::Domain("need at least one run and one round".into()));
    }
    let sampler = RoundSampler::new(cfg)?;
    let targets = stable.map(HitTargets::new);
    let schedule = CheckpointSchedule::FinalOnly.rounds(rounds);
    let traces = (0..n_runs as u64)
        .into_par_iter()
        .map(|s| run_once(&sampler, cfg, rounds, seed, s, &schedule, targets.as_ref()))
        .collect::<Result<Vec<_>>>()?;

    let n = cfg.n_items;
    let k_low = cfg.k_distribution().min_k();
    let total_rounds = rounds as f64 * n_runs as f64;
    let per_run: Vec<Vec<f64>> = traces
        .iter()
        .map(|t| {
            t.final_weights()
                .iter()
                .zip(&cfg.initial_weights)
                .map(|(&w, &w0)| (w - w0) as f64 / rounds as f64)
                .collect()
        })
        .collect();
    let win_frequencies: Vec<f64> = (0..n).map(|i| per_run.iter().map(|f| f[i]).sum::<f64>() / n_runs as f64).collect();
    // Rounds are i.i.d. only when winning probabilities do not depend on the state.
    let state_free = cfg.alpha == 0.0 && cfg.naive_fraction == 0.0;
    let win_std_errors = (0..n)
        .map(|i| {
            let f = win_frequencies[i];
            if state_free || n_runs < 2 {
                (f * (1.0 - f) / total_rounds).sqrt()
            } else {
                let var = per_run.iter().map(|r| (r[i] - f).powi(2)).sum::<f64>() / (n_runs - 1) as f64;
                (var / n_runs as f64).sqrt()
            }
        })
        .collect();
    let ordered = traces.iter().filter(|t| t.final_weights()[k_low - 1..].windows(2).all(|w| w[0] < w[1])).count();
    let mut final_top_counts = vec![0; n];
    for t in &traces {
        final_top_counts[t.final_permutation.top() - 1] += 1;
    }
    let hit_counts = stable
        .map(|s| {
            s.points
                .iter()
                .map(|p| (p.perm.clone(), traces.iter().filter(|t| t.hit_point.as_ref() == Some(&p.perm)).count()))
                .collect()
        })
        .unwrap_or_default();
    let hit_rounds: Vec<Option<u64>> = traces.iter().map(|t| t.hit_round).collect();
    let stats = RunStatistics {
        n_runs,
        rounds,
        seed,
        win_frequencies,
        win_std_errors,
        ordered_fraction: ordered as f64 / n_runs as f64,
        final_top_counts,
        hit_counts,
        median_hit_round: if stable.is_some() { median_with_unconverged(&hit_rounds) } else { None },
        unconverged: hit_rounds.iter().filter(|h| h.is_none()).count(),
        hit_rounds,
        median_first_hit_round: if stable.is_some() {
            median_with_unconverged(&traces.iter().map(|t| t.first_hit_round).collect::<Vec<_>>())
        } else {
            None
        },
    };
    Ok((stats, traces))
}

/// Empirical winning frequencies over `n_runs` runs of `rounds` rounds.
pub fn estimate_win_frequencies(cfg: &MarketConfig, rounds: u64, n_runs: usize, seed: u64) -> Result<RunStatistics> {
    run_experiment(cfg, rounds, n_runs, seed, None).map(|(s, _)| s)
}

/// Rounds needed to reach (and keep) one of the given stable points.
pub fn time_to_stable_point(
    cfg: &MarketConfig,
    n_runs: usize,
    max_rounds: u64,
    seed: u64,
    stable_set: &StablePointSet,
) -> Result<RunStatistics> {
    if stable_set.is_empty() {
        return Err(Error::EmptyStableSet);
    }
    run_experiment(cfg, max_rounds, n_runs, seed, Some(stable_set)).map(|(s, _)| s)
}

/// Winner frequencies with the popularity order held fixed at `perm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenEstimate {
    pub draws: u64,
    pub counts: Vec<u64>,
    pub frequencies: Vec<f64>,
}

pub fn frozen_state_frequencies(
    cfg: &MarketConfig,
    perm: &Permutation,
    draws: u64,
    seed: u64,
) -> Result<FrozenEstimate> {
    if perm.len() != cfg.n_items {
        return Err(Error::Permutation(format!("permutation of {} items used with N = {}", perm.len(), cfg.n_items)));
    }
    let sampler = RoundSampler::new(cfg)?;
    let mut rng = run_rng(seed, 0);
    let mut scratch = sampler.scratch();
    let order = perm.most_popular_first();
    let mut counts = vec![0u64; cfg.n_items];
    for _ in 0..draws {
        counts[sampler.winner(&mut rng, &order, &mut scratch) - 1] += 1;
    }
    let frequencies = counts.iter().map(|&c| c as f64 / draws as f64).collect();
    Ok(FrozenEstimate { draws, counts, frequencies })
}

/// `f_m* = K(K-1) / (N(N-1) + K(K-1))`: above it, naive users can keep the
/// second-best item on top under uniform pre-selection.
pub fn naive_threshold(n: usize, k: usize) -> f64 {
    let kk = (k * k.saturating_sub(1)) as f64;
    kk / ((n * (n - 1)) as f64 + kk)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisruptionReport {
    pub n_items: usize,
    pub k: usize,
    pub naive_fraction: f64,
    pub threshold: f64,
    pub above_threshold: bool,
    /// Share of runs in which an item other than N ends most popular.
    pub displaced_fraction: f64,
    pub stats: RunStatistics,
}

/// Uniform pre-selection without repetition with naive users, started with item
/// N−1 one unit ahead of everyone else.
pub fn naive_disruption_check(
    n: usize,
    k: usize,
    f_m: f64,
    rounds: u64,
    n_runs: usize,
    seed: u64,
) -> Result<DisruptionReport> {
    if n < 2 {
        return Err(Error::Domain("need at least two items".into()));
    }
    let mut w0 = vec![1u64; n];
    w0[n - 2] = 2;
    let cfg = MarketConfig::new(n, k, 0.0, RepetitionMode::WithoutRepetition)
        .with_naive_fraction(f_m)
        .with_initial_weights(w0);
    let stats = estimate_win_frequencies(&cfg, rounds, n_runs, seed)?;
    let displaced = stats.final_top_counts[..n - 1].iter().sum::<usize>() as f64 / n_runs as f64;
    let threshold = naive_threshold(n, k);
    Ok(DisruptionReport {
        n_items: n,
        k,
        naive_fraction: f_m,
        threshold,
        above_threshold: f_m >= threshold,
        displaced_fraction: displaced,
        stats,
    })
}

/// Hit counts keyed by permutation text, for JSON summaries.
pub fn hit_count_map(stats: &RunStatistics) -> BTreeMap<String, usize> {
    stats.hit_counts.iter().map(|(p, c)| (p.to_string(), *c)).collect()
}
