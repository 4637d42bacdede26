//! Minimum discrimination power K_min: the smallest K for which the natural
//! permutation is the only stable popularity order.
//!
//! Everything hinges on the critical permutation (the two best items swapped):
//! once it is unstable, every other non-natural order is too.

use serde::{Deserialize, Serialize};

use crate::equilibrium::{enumerate_stable_points, Strategy};
use crate::error::{Error, Result};
use crate::model::{rank_win_probs, KDistribution, MarketConfig, Permutation, RepetitionMode, TIE_TOL};
use crate::winprob::{blend_naive, stable_sum, win_probs_with_rep, win_probs_without_rep};

/// Largest K probed by the closed-form scans.
pub const K_SCAN_LIMIT: u64 = 1 << 52;

/// Below this K the scans step one by one; above it they gallop and bisect.
const LINEAR_SCAN: u64 = 4096;

/// Default N cap for the critical-permutation-only enumeration check.
pub const DEFAULT_CRITICAL_CAP: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KminQuery {
    pub n_items: usize,
    pub alpha: f64,
    pub repetition_mode: RepetitionMode,
    #[serde(default)]
    pub naive_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_distribution: Option<KDistribution>,
}

impl KminQuery {
    pub fn new(n_items: usize, alpha: f64, repetition_mode: RepetitionMode) -> Self {
        KminQuery { n_items, alpha, repetition_mode, naive_fraction: 0.0, k_distribution: None }
    }

    pub fn with_naive_fraction(mut self, f_m: f64) -> Self {
        self.naive_fraction = f_m;
        self
    }

    fn check(&self) -> Result<()> {
        if self.n_items < 2 {
            return Err(Error::Domain(format!("K_min needs at least two items (N = {})", self.n_items)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Domain(format!("alpha must be finite and non-negative, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.naive_fraction) {
            return Err(Error::Domain(format!("naive fraction {} outside [0, 1]", self.naive_fraction)));
        }
        Ok(())
    }
}

/// Selection mass of the critical permutation, split as
/// `1/G` (top rank), `x = 2^{-α}/G` (second rank) and `c = Σ_{i≥3} i^{-α}/G` (the rest).
#[derive(Debug, Clone, Copy)]
struct CriticalMasses {
    /// `ln(1 - x)`: cumulative mass below the top-ranked item.
    ln_a: f64,
    /// `ln c`; `-∞` for two items.
    ln_c: f64,
    /// `ln(1 - 1/G) = ln(x + c)`.
    ln_y: f64,
}

impl CriticalMasses {
    fn from_tail(alpha: f64, tail: f64) -> Self {
        let second = 2f64.powf(-alpha);
        let g = 1.0 + second + tail;
        CriticalMasses { ln_a: ((1.0 + tail) / g).ln(), ln_c: (tail / g).ln(), ln_y: ((second + tail) / g).ln() }
    }

    fn new(n: usize, alpha: f64) -> Self {
        Self::from_tail(alpha, stable_sum((3..=n).rev().map(|i| (i as f64).powf(-alpha))))
    }

    /// `F(K) = 2 a^K - 1 - c^K`: the critical permutation is stable iff this is positive.
    fn gap(&self, k: u64) -> f64 {
        let k = k as f64;
        2.0 * (k * self.ln_a).exp() - 1.0 - (k * self.ln_c).exp()
    }

    /// Approximate without-repetition condition, `lhs - rhs` in log space.
    fn without_rep_margin(&self, k: u64) -> f64 {
        let kf = k as f64;
        let lhs =
            if k == 1 { std::f64::consts::LN_2 } else { std::f64::consts::LN_2 + (kf - 1.0) * (self.ln_c - self.ln_y) };
        let rhs = (-(kf * self.ln_c).exp_m1()).ln() - (-(kf * self.ln_y).exp_m1()).ln();
        lhs - rhs
    }
}

/// Smallest `k ≥ start` with `holds(k)`, assuming a single false→true switch.
fn first_true(start: u64, holds: impl Fn(u64) -> bool) -> Result<u64> {
    let mut k = start;
    while k <= LINEAR_SCAN {
        if holds(k) {
            return Ok(k);
        }
        k += 1;
    }
    let mut lo = LINEAR_SCAN;
    let mut hi = LINEAR_SCAN * 2;
    while !holds(hi) {
        lo = hi;
        hi = hi.checked_mul(2).filter(|&h| h <= K_SCAN_LIMIT).ok_or(Error::KminNotFound { limit: K_SCAN_LIMIT })?;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// True iff `2(1 - 2^{-α}/G)^K ≤ 1 + (1 - 1/G - 2^{-α}/G)^K`, i.e. the critical
/// permutation is not stable with repetition.
pub fn critical_condition_with_rep(n: usize, alpha: f64, k: u64) -> bool {
    CriticalMasses::new(n, alpha).gap(k) <= 0.0
}

/// Smallest K making the critical permutation unstable, with repetition.
///
/// K_min can exceed N here (it grows without bound in α), so the scan is not capped at N.
pub fn kmin_with_rep(q: &KminQuery) -> Result<u64> {
    q.check()?;
    let m = CriticalMasses::new(q.n_items, q.alpha);
    first_true(2, |k| m.gap(k) <= 0.0)
}

/// Smallest K satisfying the approximate without-repetition condition (top two
/// items drawn without repetition, the rest treated as with repetition).
pub fn kmin_without_rep_approx(q: &KminQuery) -> Result<u64> {
    q.check()?;
    let m = CriticalMasses::new(q.n_items, q.alpha);
    first_true(2, |k| m.without_rep_margin(k) <= 0.0)
}

/// `f_m + (1 - f_m) F(K) < 0`; `None` when no K works (`f_m ≥ 1/2`).
pub fn kmin_with_naive(q: &KminQuery) -> Result<Option<u64>> {
    q.check()?;
    let f_m = q.naive_fraction;
    if f_m >= 0.5 {
        return Ok(None);
    }
    let m = CriticalMasses::new(q.n_items, q.alpha);
    if f_m == 0.0 {
        return first_true(2, |k| m.gap(k) <= 0.0).map(Some);
    }
    first_true(2, |k| f_m + (1.0 - f_m) * m.gap(k) < 0.0).map(Some)
}

/// True iff `Σ_k p_k [2(1 - 2^{-α}/G)^k - 1 - (1 - 1/G - 2^{-α}/G)^k] < 0`.
pub fn kdist_condition(n: usize, alpha: f64, p_k: &KDistribution) -> bool {
    let m = CriticalMasses::new(n, alpha);
    stable_sum(p_k.iter().map(|(k, p)| p * m.gap(k as u64))) < 0.0
}

/// Dispatches on the query: naive users, with repetition, or the
/// without-repetition approximation.
pub fn kmin(q: &KminQuery) -> Result<Option<u64>> {
    if q.naive_fraction > 0.0 {
        if q.repetition_mode == RepetitionMode::WithoutRepetition {
            return Err(Error::Domain("naive users are only supported with repetition".into()));
        }
        return kmin_with_naive(q);
    }
    match q.repetition_mode {
        RepetitionMode::WithRepetition => kmin_with_rep(q).map(Some),
        RepetitionMode::WithoutRepetition => kmin_without_rep_approx(q).map(Some),
    }
}

/// Stability margin of a permutation whose first misplaced item (the `v`-th best)
/// is lifted by `delta` ranks: positive means that permutation is stable.
pub fn gap_function(delta: usize, v: usize, k: u64, n: usize, alpha: f64) -> Result<f64> {
    if n < 2 || delta < 1 || delta > n - 1 || v < delta + 1 || v > n || k < 1 {
        return Err(Error::Domain(format!(
            "gap function needs 1 ≤ Δ ≤ N-1, Δ+1 ≤ v ≤ N, K ≥ 1 (Δ = {delta}, v = {v}, K = {k}, N = {n})"
        )));
    }
    let g = crate::winprob::rank_normalizer(n, alpha);
    let s_star = stable_sum((v + 1..=n).rev().map(|i| (i as f64).powf(-alpha))) / g;
    let lifted = ((v - delta) as f64).powf(-alpha) / g;
    let next = ((v - delta + 1) as f64).powf(-alpha) / g;
    let pow = |x: f64| x.powf(k as f64);
    Ok(2.0 * pow(s_star + lifted) - pow(s_star) - pow(s_star + lifted + next))
}

/// Riemann zeta for `s > 1`: partial sum plus an Euler–Maclaurin tail.
#[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN too
pub fn zeta(s: f64) -> Result<f64> {
    if !(s > 1.0) || !s.is_finite() {
        return Err(Error::Domain(format!("zeta needs s > 1, got {s}")));
    }
    const M: usize = 32;
    let head = stable_sum((1..M).rev().map(|i| (i as f64).powf(-s)));
    let m = M as f64;
    let ms = m.powf(-s);
    let tail = m.powf(1.0 - s) / (s - 1.0) + ms / 2.0 + s * ms / m / 12.0
        - s * (s + 1.0) * (s + 2.0) * ms / m.powi(3) / 720.0
        + s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) * ms / m.powi(5) / 30240.0;
    Ok(head + tail)
}

/// Limit of the with-repetition K_min as N → ∞, which exists for α > 1.
pub fn kmin_with_rep_limit(alpha: f64) -> Result<u64> {
    let z = zeta(alpha)?;
    let tail = z - 1.0 - 2f64.powf(-alpha);
    let m = CriticalMasses::from_tail(alpha, tail);
    first_true(2, |k| m.gap(k) <= 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ExactMethod {
    /// Check only the natural and critical permutations.
    CriticalOnly { cap: usize },
    /// Enumerate every permutation.
    Exhaustive { cap: usize },
}

impl Default for ExactMethod {
    fn default() -> Self {
        ExactMethod::CriticalOnly { cap: DEFAULT_CRITICAL_CAP }
    }
}

/// Smallest K for which the model itself (rather than a closed form) leaves the
/// natural permutation as the only stable point.
pub fn kmin_exact_enumeration(q: &KminQuery, method: ExactMethod) -> Result<u64> {
    q.check()?;
    let n = q.n_items;
    let k_limit: u64 = match q.repetition_mode {
        RepetitionMode::WithoutRepetition => n as u64,
        RepetitionMode::WithRepetition => LINEAR_SCAN,
    };
    let natural = Permutation::natural(n);
    let critical = Permutation::critical(n);
    let cfg_for =
        |k: u64| MarketConfig::new(n, k as usize, q.alpha, q.repetition_mode).with_naive_fraction(q.naive_fraction);
    // With repetition K may exceed N, which a MarketConfig does not allow, so the
    // two permutations are evaluated with the engines directly.
    let stable = |perm: &Permutation, k: u64| -> Result<bool> {
        let b = match q.repetition_mode {
            RepetitionMode::WithRepetition => win_probs_with_rep(perm, q.alpha, k as usize)?,
            RepetitionMode::WithoutRepetition => win_probs_without_rep(perm, q.alpha, k as usize)?,
        };
        let b = blend_naive(&b, perm.top(), q.naive_fraction)?;
        let (out, tie) = rank_win_probs(&b.probs, TIE_TOL);
        Ok(&out == perm && !tie)
    };
    match method {
        ExactMethod::CriticalOnly { cap } => {
            if n > cap {
                return Err(Error::CapExceeded { n, cap });
            }
            for k in 1..=k_limit {
                if stable(&natural, k)? && !stable(&critical, k)? {
                    return Ok(k);
                }
            }
        }
        ExactMethod::Exhaustive { cap } => {
            if n > cap {
                return Err(Error::CapExceeded { n, cap });
            }
            for k in 1..=k_limit.min(n as u64) {
                let set = enumerate_stable_points(&cfg_for(k), Strategy::Exhaustive { cap })?;
                if set.len() == 1 && set.points[0].perm == natural {
                    return Ok(k);
                }
            }
        }
    }
    Err(Error::KminNotFound { limit: k_limit })
}

/// One row of a K_min table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KminRow {
    pub alpha: f64,
    pub n_items: usize,
    pub mode: RepetitionMode,
    pub naive_fraction: f64,
    /// Closed form (with repetition) or approximation (without).
    pub k_min: Option<u64>,
    /// Model-based value, when requested and within the caps.
    pub k_min_exact: Option<u64>,
}

/// K_min over an (α, N) grid, in row-major order of `alphas` then `ns`.
pub fn kmin_sweep(
    alphas: &[f64],
    ns: &[usize],
    mode: RepetitionMode,
    naive_fraction: f64,
    exact: bool,
) -> Result<Vec<KminRow>> {
    use rayon::prelude::*;
    let grid: Vec<(f64, usize)> = alphas.iter().flat_map(|&a| ns.iter().map(move |&n| (a, n))).collect();
    grid.into_par_iter()
        .map(|(alpha, n)| {
            let q = KminQuery::new(n, alpha, mode).with_naive_fraction(naive_fraction);
            let k_min = kmin(&q)?;
            let k_min_exact = if exact && n <= DEFAULT_CRITICAL_CAP && k_min.is_some() {
                Some(kmin_exact_enumeration(&q, ExactMethod::default())?)
            } else {
                None
            };
            Ok(KminRow { alpha, n_items: n, mode, naive_fraction, k_min, k_min_exact })
        })
        .collect()
}
