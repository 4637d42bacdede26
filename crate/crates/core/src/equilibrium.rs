//! The B-map over popularity orders, its stable points and the permutation graph.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    factorial, rank_win_probs, rank_with_tiebreak, MarketConfig, Permutation, WeightVector, WinProbVector, TIE_TOL,
};
use crate::winprob::MarketModel;

/// Default largest N for exhaustive enumeration and full graphs.
pub const DEFAULT_EXHAUSTIVE_CAP: usize = 10;

/// Largest number of permuted top items the automatic pruned search will try.
const PRUNED_AUTO_MAX_TOP: usize = 10;

/// Largest number of permuted top items accepted by an explicit pruned search.
const PRUNED_MAX_TOP: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BMapResult {
    pub input_perm: Permutation,
    pub b: WinProbVector,
    pub output_perm: Permutation,
    pub has_tie: bool,
}

impl BMapResult {
    pub fn is_fixed(&self) -> bool {
        self.input_perm == self.output_perm
    }

    /// Fixed and free of ties.
    pub fn is_stable(&self) -> bool {
        self.is_fixed() && !self.has_tie
    }
}

/// Evaluates `B(perm)` for a configuration.
pub fn apply_b(perm: &Permutation, cfg: &MarketConfig) -> Result<BMapResult> {
    apply_b_with(&MarketModel::new(cfg)?, perm)
}

/// [`apply_b`] against a precomputed model.
pub fn apply_b_with(model: &MarketModel, perm: &Permutation) -> Result<BMapResult> {
    let b = model.win_probs(perm)?;
    let (output_perm, has_tie) = rank_win_probs(&b.probs, TIE_TOL);
    Ok(BMapResult { input_perm: perm.clone(), b, output_perm, has_tie })
}

pub fn is_stable(perm: &Permutation, cfg: &MarketConfig) -> Result<bool> {
    Ok(apply_b(perm, cfg)?.is_stable())
}

/// A fixed point of the B-map. Members of a [`StablePointSet`] never have ties;
/// graph fixed points may.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StablePoint {
    pub perm: Permutation,
    pub b: WinProbVector,
    /// Average (perceived) quality at this point.
    pub q_bar: f64,
    pub has_tie: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub attractiveness: Option<f64>,
}

impl StablePoint {
    fn from_result(model: &MarketModel, r: BMapResult) -> Result<Self> {
        let q_bar = model.perceived_average_quality(&r.input_perm)?;
        Ok(StablePoint { perm: r.input_perm, b: r.b, q_bar, has_tie: r.has_tie, attractiveness: None })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    /// Every permutation was examined.
    Complete,
    /// Only part of the space was examined; points may be missing.
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Strategy {
    Exhaustive {
        cap: usize,
    },
    /// Permute only the `m + 1` best items; the rest stay in natural order.
    Pruned {
        m: usize,
    },
    /// Pruned search with `m` grown from 2 until a level adds no stable point.
    PrunedAuto,
    Randomized {
        trials: usize,
        seed: u64,
    },
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Exhaustive { cap } => write!(f, "exhaustive(cap={cap})"),
            Strategy::Pruned { m } => write!(f, "pruned({m})"),
            Strategy::PrunedAuto => f.write_str("pruned(auto)"),
            Strategy::Randomized { trials, seed } => write!(f, "randomized(trials={trials}, seed={seed})"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// Accepts `exhaustive`, `pruned`, `pruned:M` and `randomized`; randomized
    /// defaults to 1000 trials with seed 0.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, arg) = match s.split_once([':', '=']) {
            Some((a, b)) => (a, Some(b)),
            None => (s.as_str(), None),
        };
        let bad = || Error::Domain(format!("unknown strategy '{s}'"));
        let num = |a: &str| a.trim().parse::<usize>().map_err(|_| bad());
        match (name, arg) {
            ("exhaustive", None) => Ok(Strategy::Exhaustive { cap: DEFAULT_EXHAUSTIVE_CAP }),
            ("exhaustive", Some(a)) => Ok(Strategy::Exhaustive { cap: num(a)? }),
            ("pruned", None | Some("auto")) => Ok(Strategy::PrunedAuto),
            ("pruned", Some(a)) => Ok(Strategy::Pruned { m: num(a)? }),
            ("randomized" | "random", None) => Ok(Strategy::Randomized { trials: 1000, seed: 0 }),
            ("randomized" | "random", Some(a)) => Ok(Strategy::Randomized { trials: num(a)?, seed: 0 }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StablePointSet {
    pub n_items: usize,
    pub strategy: Strategy,
    pub scope: Scope,
    /// Stable points ordered lexicographically by permutation.
    pub points: Vec<StablePoint>,
    /// Permutations whose B-image was evaluated.
    pub explored: u64,
    /// Randomized trials run.
    #[serde(default)]
    pub trials: usize,
    /// Randomized trials that hit the iteration cap.
    #[serde(default)]
    pub failures: usize,
    /// Randomized trials ending on a fixed point with ties.
    #[serde(default)]
    pub tie_rejections: usize,
}

impl StablePointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn perms(&self) -> Vec<Permutation> {
        self.points.iter().map(|p| p.perm.clone()).collect()
    }

    pub fn contains(&self, perm: &Permutation) -> bool {
        self.points.iter().any(|p| &p.perm == perm)
    }

    /// Copies attractiveness values from a full graph onto the points.
    pub fn attach_attractiveness(&mut self, graph: &PermutationGraph) -> Result<()> {
        for p in &mut self.points {
            p.attractiveness = Some(graph.attractiveness(&p.perm)?);
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stable point sets serialize")
    }
}

/// Rearranges `v` into the next lexicographic permutation; false after the last one.
pub(crate) fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Splits `0..total` into contiguous blocks for parallel workers.
fn lex_blocks(total: u64) -> Vec<(u64, u64)> {
    let blocks = (rayon::current_num_threads() as u64 * 8).clamp(1, total.max(1));
    let size = total.div_ceil(blocks);
    (0..blocks).map(|b| (b * size, ((b + 1) * size).min(total))).filter(|(s, e)| s < e).collect()
}

/// Runs `visit` on every permutation of `items`, prefixed by `prefix`, in
/// lexicographic order of the suffix, split into parallel blocks; results are
/// concatenated in lexicographic order.
fn par_scan<T: Send>(
    prefix: &[usize],
    items: &[usize],
    visit: impl Fn(&Permutation) -> Result<Option<T>> + Sync,
) -> Result<Vec<T>> {
    let m = items.len();
    let total = factorial(m);
    let chunks: Vec<Result<Vec<T>>> = lex_blocks(total)
        .into_par_iter()
        .map(|(start, end)| {
            let local = Permutation::from_lex_index(m, start);
            let mut suffix: Vec<usize> = local.as_slice().iter().map(|&j| items[j - 1]).collect();
            let mut out = Vec::new();
            let mut full = Vec::with_capacity(prefix.len() + m);
            for idx in start..end {
                full.clear();
                full.extend_from_slice(prefix);
                full.extend_from_slice(&suffix);
                if let Some(t) = visit(&Permutation::from_vec_unchecked(full.clone()))? {
                    out.push(t);
                }
                if idx + 1 < end {
                    next_permutation(&mut suffix);
                }
            }
            Ok(out)
        })
        .collect();
    let mut all = Vec::new();
    for c in chunks {
        all.extend(c?);
    }
    Ok(all)
}

/// Stable points among the permutations that keep items `1..=N-top` in natural
/// order at the bottom and permute the `top` best items above them.
fn stable_points_with_top(model: &MarketModel, top: usize) -> Result<Vec<StablePoint>> {
    let n = model.n_items();
    let top = top.clamp(1, n);
    let prefix: Vec<usize> = (1..=n - top).collect();
    let items: Vec<usize> = (n - top + 1..=n).collect();
    par_scan(&prefix, &items, |perm| {
        let r = apply_b_with(model, perm)?;
        if r.is_stable() {
            Ok(Some(StablePoint::from_result(model, r)?))
        } else {
            Ok(None)
        }
    })
}

/// Finds stable points with the requested strategy.
pub fn enumerate_stable_points(cfg: &MarketConfig, strategy: Strategy) -> Result<StablePointSet> {
    let model = MarketModel::new(cfg)?;
    let n = model.n_items();
    let set = |points, scope, explored| StablePointSet {
        n_items: n,
        strategy,
        scope,
        points,
        explored,
        trials: 0,
        failures: 0,
        tie_rejections: 0,
    };
    match strategy {
        Strategy::Exhaustive { cap } => {
            if n > cap {
                return Err(Error::CapExceeded { n, cap });
            }
            let points = stable_points_with_top(&model, n)?;
            Ok(set(points, Scope::Complete, factorial(n)))
        }
        Strategy::Pruned { m } => {
            let top = (m + 1).min(n);
            if top > PRUNED_MAX_TOP {
                return Err(Error::CapExceeded { n: top, cap: PRUNED_MAX_TOP });
            }
            let points = stable_points_with_top(&model, top)?;
            let scope = if top == n { Scope::Complete } else { Scope::Partial };
            Ok(set(points, scope, factorial(top)))
        }
        Strategy::PrunedAuto => {
            let mut explored = 0;
            let mut top = 3.min(n);
            let mut points = stable_points_with_top(&model, top)?;
            explored += factorial(top);
            while top < n && top < PRUNED_AUTO_MAX_TOP {
                let next = stable_points_with_top(&model, top + 1)?;
                explored += factorial(top + 1);
                top += 1;
                let grew = next.len() > points.len();
                points = next;
                if !grew {
                    break;
                }
            }
            let scope = if top == n { Scope::Complete } else { Scope::Partial };
            Ok(set(points, scope, explored))
        }
        Strategy::Randomized { trials, seed } => randomized_search_with(&model, trials, seed),
    }
}

/// Algorithm-style randomized search: from random positive stochastic vectors,
/// iterate the B-map until the popularity order stops changing.
pub fn randomized_search(cfg: &MarketConfig, trials: usize, seed: u64) -> Result<StablePointSet> {
    randomized_search_with(&MarketModel::new(cfg)?, trials, seed)
}

enum TrialEnd {
    Stable(BMapResult, u64),
    Tied(u64),
    Failed(u64),
}

pub fn randomized_search_with(model: &MarketModel, trials: usize, seed: u64) -> Result<StablePointSet> {
    if trials == 0 {
        return Err(Error::Domain("randomized search needs at least one trial".into()));
    }
    let n = model.n_items();
    let max_iter = 10 * n * n;
    let ends: Vec<Result<TrialEnd>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            // i.i.d. exponentials normalize to a uniform point of the simplex
            let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln() + f64::MIN_POSITIVE).collect();
            let w = WeightVector::new(w, 0)?;
            let mut perm = rank_with_tiebreak(&w);
            for step in 1..=max_iter as u64 {
                let r = apply_b_with(model, &perm)?;
                if r.is_fixed() {
                    return Ok(if r.has_tie { TrialEnd::Tied(step) } else { TrialEnd::Stable(r, step) });
                }
                perm = r.output_perm;
            }
            Ok(TrialEnd::Failed(max_iter as u64))
        })
        .collect();
    let mut found: BTreeMap<Permutation, BMapResult> = BTreeMap::new();
    let (mut failures, mut tie_rejections, mut explored) = (0, 0, 0);
    for end in ends {
        match end? {
            TrialEnd::Stable(r, steps) => {
                explored += steps;
                found.entry(r.input_perm.clone()).or_insert(r);
            }
            TrialEnd::Tied(steps) => {
                explored += steps;
                tie_rejections += 1;
            }
            TrialEnd::Failed(steps) => {
                explored += steps;
                failures += 1;
            }
        }
    }
    let mut points = found.into_values().map(|r| StablePoint::from_result(model, r)).collect::<Result<Vec<_>>>()?;
    points.sort_by_key(|p| p.perm.lex_index());
    Ok(StablePointSet {
        n_items: n,
        strategy: Strategy::Randomized { trials, seed },
        scope: Scope::Partial,
        points,
        explored,
        trials,
        failures,
        tie_rejections,
    })
}

/// The functional graph `perm → B(perm)`. Nodes are identified by lexicographic index.
#[derive(Debug, Clone)]
pub struct PermutationGraph {
    n: usize,
    scope: Scope,
    model: MarketModel,
    /// Sorted node ids; `None` when the nodes are exactly `0..N!`.
    nodes: Option<Vec<u64>>,
    /// Position of each node's B-image.
    succ: Vec<u32>,
    /// Weak component id per node.
    component: Vec<u32>,
    component_sizes: Vec<u64>,
    /// Positions of self-loops, with their tie flags.
    fixed: Vec<(u32, bool)>,
    /// Cycles of length ≥ 2, as node positions.
    cycles: Vec<Vec<u32>>,
}

/// Fixed points are listed in a summary only up to this many.
const SUMMARY_FIXED_POINT_LIMIT: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub n_items: usize,
    pub scope: Scope,
    pub nodes: usize,
    pub components: usize,
    pub cycles: usize,
    pub fixed_point_count: usize,
    pub stable_point_count: usize,
    /// Empty when there are too many to list.
    pub fixed_points: Vec<StablePoint>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub overall_quality: Option<f64>,
}

impl PermutationGraph {
    /// All N! permutations (requires `N ≤ cap`).
    pub fn build(cfg: &MarketConfig, cap: usize) -> Result<Self> {
        let model = MarketModel::new(cfg)?;
        let n = model.n_items();
        if n > cap || n > 12 {
            return Err(Error::CapExceeded { n, cap: cap.min(12) });
        }
        let items: Vec<usize> = (1..=n).collect();
        let edges = par_scan(&[], &items, |perm| {
            let r = apply_b_with(&model, perm)?;
            Ok(Some((r.output_perm.lex_index() as u32, r.has_tie)))
        })?;
        let succ: Vec<u32> = edges.iter().map(|&(s, _)| s).collect();
        let fixed = edges
            .iter()
            .enumerate()
            .filter(|(pos, &(s, _))| s as usize == *pos)
            .map(|(pos, &(_, tie))| (pos as u32, tie))
            .collect();
        drop(edges);
        Ok(Self::assemble(model, Scope::Complete, None, succ, fixed))
    }

    /// Only the nodes reachable from `seeds` by following B-edges.
    pub fn from_seeds(cfg: &MarketConfig, seeds: &[Permutation]) -> Result<Self> {
        let model = MarketModel::new(cfg)?;
        let n = model.n_items();
        let mut edges: BTreeMap<u64, (u64, bool)> = BTreeMap::new();
        for seed in seeds {
            let mut perm = seed.clone();
            loop {
                let id = perm.lex_index();
                if edges.contains_key(&id) {
                    break;
                }
                let r = apply_b_with(&model, &perm)?;
                edges.insert(id, (r.output_perm.lex_index(), r.has_tie));
                perm = r.output_perm;
            }
        }
        let nodes: Vec<u64> = edges.keys().copied().collect();
        let succ: Vec<u32> =
            edges.values().map(|(s, _)| nodes.binary_search(s).expect("successors are explored") as u32).collect();
        let fixed = succ
            .iter()
            .enumerate()
            .filter(|(pos, &s)| s as usize == *pos)
            .map(|(pos, _)| (pos as u32, edges[&nodes[pos]].1))
            .collect();
        let scope = if nodes.len() as u64 == factorial(n) { Scope::Complete } else { Scope::Partial };
        Ok(Self::assemble(model, scope, Some(nodes), succ, fixed))
    }

    fn assemble(
        model: MarketModel,
        scope: Scope,
        nodes: Option<Vec<u64>>,
        succ: Vec<u32>,
        fixed: Vec<(u32, bool)>,
    ) -> Self {
        let len = succ.len();
        const UNSEEN: u32 = u32::MAX;
        const ON_PATH: u32 = u32::MAX - 1;
        let mut component = vec![UNSEEN; len];
        let mut component_sizes: Vec<u64> = Vec::new();
        let mut cycles = Vec::new();
        let mut path: Vec<u32> = Vec::new();
        for start in 0..len {
            if component[start] != UNSEEN {
                continue;
            }
            path.clear();
            let mut v = start as u32;
            while component[v as usize] == UNSEEN {
                component[v as usize] = ON_PATH;
                path.push(v);
                v = succ[v as usize];
            }
            let id = if component[v as usize] == ON_PATH {
                // closed a new cycle: the path from v onwards
                let at = path.iter().position(|&x| x == v).expect("v is on the path");
                if path.len() - at >= 2 {
                    cycles.push(path[at..].to_vec());
                }
                component_sizes.push(0);
                (component_sizes.len() - 1) as u32
            } else {
                component[v as usize]
            };
            for &x in &path {
                component[x as usize] = id;
            }
            component_sizes[id as usize] += path.len() as u64;
        }
        PermutationGraph { n: model.n_items(), scope, model, nodes, succ, component, component_sizes, fixed, cycles }
    }

    fn node_id(&self, pos: u32) -> u64 {
        match &self.nodes {
            Some(nodes) => nodes[pos as usize],
            None => pos as u64,
        }
    }

    fn perm_at(&self, pos: u32) -> Permutation {
        Permutation::from_lex_index(self.n, self.node_id(pos))
    }

    pub fn n_items(&self) -> usize {
        self.n
    }

    pub fn scope(&self) -> Scope {
        self.scope
    }

    pub fn node_count(&self) -> usize {
        self.succ.len()
    }

    pub fn component_count(&self) -> usize {
        self.component_sizes.len()
    }

    pub fn fixed_point_count(&self) -> usize {
        self.fixed.len()
    }

    pub fn stable_point_count(&self) -> usize {
        self.fixed.iter().filter(|(_, tie)| !tie).count()
    }

    fn attractiveness_at(&self, pos: u32) -> Option<f64> {
        (self.scope == Scope::Complete)
            .then(|| self.component_sizes[self.component[pos as usize] as usize] as f64 / factorial(self.n) as f64)
    }

    fn materialize(&self, pos: u32) -> Result<StablePoint> {
        let mut point = StablePoint::from_result(&self.model, apply_b_with(&self.model, &self.perm_at(pos))?)?;
        point.attractiveness = self.attractiveness_at(pos);
        Ok(point)
    }

    /// All fixed points, with ties included and marked.
    pub fn fixed_points(&self) -> Result<Vec<StablePoint>> {
        self.fixed.iter().map(|&(pos, _)| self.materialize(pos)).collect()
    }

    /// Fixed points without ties.
    pub fn stable_points(&self) -> Result<Vec<StablePoint>> {
        self.fixed.iter().filter(|(_, tie)| !tie).map(|&(pos, _)| self.materialize(pos)).collect()
    }

    /// `Q̄ = Σ_f a(f) q̄(f)` over every fixed point (ties included, so that the
    /// attractiveness values sum to one); requires the complete graph.
    pub fn overall_quality(&self) -> Result<f64> {
        if self.scope != Scope::Complete {
            return Err(Error::MissingAttractiveness);
        }
        let terms = self
            .fixed
            .par_iter()
            .map(|&(pos, _)| {
                let a = self.attractiveness_at(pos).expect("complete graph");
                Ok(a * self.model.perceived_average_quality(&self.perm_at(pos))?)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(crate::winprob::stable_sum(terms))
    }

    pub fn cycles(&self) -> Vec<Vec<Permutation>> {
        self.cycles.iter().map(|c| c.iter().map(|&v| self.perm_at(v)).collect()).collect()
    }

    pub fn has_long_cycle(&self) -> bool {
        !self.cycles.is_empty()
    }

    fn position(&self, perm: &Permutation) -> Option<u32> {
        if perm.len() != self.n {
            return None;
        }
        let id = perm.lex_index();
        match &self.nodes {
            Some(nodes) => nodes.binary_search(&id).ok().map(|p| p as u32),
            None => Some(id as u32),
        }
    }

    pub fn successor(&self, perm: &Permutation) -> Option<Permutation> {
        self.position(perm).map(|p| self.perm_at(self.succ[p as usize]))
    }

    /// Size of the weak component containing `perm`.
    pub fn component_size(&self, perm: &Permutation) -> Option<u64> {
        self.position(perm).map(|p| self.component_sizes[self.component[p as usize] as usize])
    }

    /// `|component(f)| / N!` for a fixed point `f`; requires the complete graph.
    pub fn attractiveness(&self, f: &Permutation) -> Result<f64> {
        let pos = self.position(f).ok_or_else(|| Error::NotAFixedPoint(f.to_string()))?;
        if self.succ[pos as usize] != pos {
            return Err(Error::NotAFixedPoint(f.to_string()));
        }
        self.attractiveness_at(pos)
            .ok_or_else(|| Error::Domain("attractiveness needs the complete permutation graph".into()))
    }

    pub fn summary(&self) -> Result<GraphSummary> {
        let fixed_points =
            if self.fixed.len() <= SUMMARY_FIXED_POINT_LIMIT { self.fixed_points()? } else { Vec::new() };
        Ok(GraphSummary {
            n_items: self.n,
            scope: self.scope,
            nodes: self.node_count(),
            components: self.component_sizes.len(),
            cycles: self.cycles.len(),
            fixed_point_count: self.fixed.len(),
            stable_point_count: self.stable_point_count(),
            fixed_points,
            overall_quality: self.overall_quality().ok(),
        })
    }

    /// One `from to` line per edge, permutations as comma-joined ids.
    pub fn write_edge_list<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        for (pos, &s) in self.succ.iter().enumerate() {
            writeln!(out, "{} {}", self.perm_at(pos as u32), self.perm_at(s))?;
        }
        Ok(())
    }
}

/// Number of B-map applications needed to reach a fixed point from `perm`, if reached
/// within `max_steps`.
pub fn steps_to_fixed_point(model: &MarketModel, perm: &Permutation, max_steps: usize) -> Result<Option<usize>> {
    let mut perm = perm.clone();
    for step in 0..max_steps {
        let r = apply_b_with(model, &perm)?;
        if r.is_fixed() {
            return Ok(Some(step));
        }
        perm = r.output_perm;
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RepetitionMode::{WithRepetition, WithoutRepetition};

    fn perm(s: &str) -> Permutation {
        s.parse().unwrap()
    }

    #[test]
    fn four_items_fixed_points() {
        let cfg = MarketConfig::new(4, 2, 1.0, WithRepetition);
        for s in ["1,2,3,4", "1,2,4,3", "1,4,3,2"] {
            assert!(apply_b(&perm(s), &cfg).unwrap().is_fixed(), "{s}");
        }
        let tied = apply_b(&perm("1,4,3,2"), &cfg).unwrap();
        assert!(tied.has_tie);
        assert!((tied.b.get(2) - tied.b.get(3)).abs() < 1e-12);
        assert!(is_stable(&perm("1,2,3,4"), &cfg).unwrap());
        assert!(is_stable(&perm("1,2,4,3"), &cfg).unwrap());
        assert!(!is_stable(&perm("1,4,3,2"), &cfg).unwrap());
    }

    #[test]
    fn single_draw_fixes_every_permutation() {
        let cfg = MarketConfig::new(5, 1, 1.0, WithRepetition);
        for idx in [0, 17, 63, 119] {
            let p = Permutation::from_lex_index(5, idx);
            let r = apply_b(&p, &cfg).unwrap();
            assert_eq!(r.output_perm, p);
            assert!(!r.has_tie);
        }
        // at α = 0 every b_i is equal, so nothing is stable
        let flat = MarketConfig::new(5, 1, 0.0, WithRepetition);
        assert!(!is_stable(&Permutation::natural(5), &flat).unwrap());
    }

    #[test]
    fn next_permutation_walks_lex_order() {
        let mut v = vec![1, 2, 3, 4];
        let mut idx = 0;
        loop {
            assert_eq!(Permutation::new(v.clone()).unwrap().lex_index(), idx);
            idx += 1;
            if !next_permutation(&mut v) {
                break;
            }
        }
        assert_eq!(idx, 24);
    }

    #[test]
    fn graph_for_four_items() {
        let cfg = MarketConfig::new(4, 2, 1.0, WithRepetition);
        let g = PermutationGraph::build(&cfg, 10).unwrap();
        assert_eq!(g.node_count(), 24);
        assert_eq!(g.fixed_point_count(), 3);
        assert!(!g.has_long_cycle());
        let a = |s: &str| g.attractiveness(&perm(s)).unwrap();
        assert!((a("1,2,3,4") - 0.5).abs() < 1e-15);
        assert!((a("1,2,4,3") - 1.0 / 3.0).abs() < 1e-15);
        assert!((a("1,4,3,2") - 1.0 / 6.0).abs() < 1e-15);
        assert!(matches!(g.attractiveness(&perm("4,3,2,1")), Err(Error::NotAFixedPoint(_))));
        let stable: Vec<_> = g.stable_points().unwrap().into_iter().map(|p| p.perm).collect();
        assert_eq!(stable, vec![perm("1,2,3,4"), perm("1,2,4,3")]);

        let mut edges = Vec::new();
        g.write_edge_list(&mut edges).unwrap();
        let text = String::from_utf8(edges).unwrap();
        assert_eq!(text.lines().count(), 24);
        assert!(text.lines().any(|l| l == "1,2,3,4 1,2,3,4"));
    }

    #[test]
    fn partial_graph_from_seeds() {
        let cfg = MarketConfig::new(4, 2, 1.0, WithRepetition);
        let g = PermutationGraph::from_seeds(&cfg, &[perm("4,3,2,1")]).unwrap();
        assert_eq!(g.scope(), Scope::Partial);
        assert_eq!(g.fixed_point_count(), 1);
        assert!(g.attractiveness(&g.fixed_points().unwrap()[0].perm).is_err());
        assert!(g.overall_quality().is_err());
    }

    #[test]
    fn three_items_split_basins() {
        let cfg = MarketConfig::new(3, 2, 1.0, WithRepetition);
        let g = PermutationGraph::build(&cfg, 10).unwrap();
        let stable = g.stable_points().unwrap();
        assert_eq!(stable.len(), 2);
        for p in &stable {
            assert!((p.attractiveness.unwrap() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn ten_items_pruned_census() {
        let cfg = MarketConfig::new(10, 2, 1.0, WithoutRepetition);
        let set = enumerate_stable_points(&cfg, Strategy::PrunedAuto).unwrap();
        let expected: Vec<Permutation> =
            ["1,2,3,4,5,6,7,8,9,10", "1,2,3,4,5,6,7,8,10,9", "1,2,3,4,5,6,7,9,8,10", "1,2,3,4,5,6,7,10,9,8"]
                .iter()
                .map(|s| perm(s))
                .collect();
        let mut got = set.perms();
        got.sort();
        let mut want = expected.clone();
        want.sort();
        assert_eq!(got, want);
    }

    #[test]
    fn exhaustive_matches_graph_and_randomized_is_a_subset() {
        let cfg = MarketConfig::new(5, 2, 1.0, WithoutRepetition);
        let exact = enumerate_stable_points(&cfg, Strategy::Exhaustive { cap: 10 }).unwrap();
        let g = PermutationGraph::build(&cfg, 10).unwrap();
        assert_eq!(exact.perms(), g.stable_points().unwrap().into_iter().map(|p| p.perm).collect::<Vec<_>>());
        let rand = randomized_search(&cfg, 200, 7).unwrap();
        assert!(rand.perms().iter().all(|p| exact.contains(p)));
        assert_eq!(rand.failures, 0);
        assert!(enumerate_stable_points(&cfg, Strategy::Exhaustive { cap: 4 }).is_err());
    }

    #[test]
    fn randomized_is_deterministic() {
        let cfg = MarketConfig::new(6, 3, 1.5, WithRepetition);
        let a = randomized_search(&cfg, 5, 42).unwrap();
        let b = randomized_search(&cfg, 5, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("exhaustive".parse::<Strategy>().unwrap(), Strategy::Exhaustive { cap: 10 });
        assert_eq!("pruned:4".parse::<Strategy>().unwrap(), Strategy::Pruned { m: 4 });
        assert_eq!("pruned".parse::<Strategy>().unwrap(), Strategy::PrunedAuto);
        assert_eq!("randomized:50".parse::<Strategy>().unwrap(), Strategy::Randomized { trials: 50, seed: 0 });
        assert!("greedy".parse::<Strategy>().is_err());
    }

    #[test]
    fn set_serializes() {
        let cfg = MarketConfig::new(3, 2, 1.0, WithRepetition);
        let set = enumerate_stable_points(&cfg, Strategy::Exhaustive { cap: 10 }).unwrap();
        let back: StablePointSet = serde_json::from_str(&set.to_json()).unwrap();
        assert_eq!(back, set);
    }
}
