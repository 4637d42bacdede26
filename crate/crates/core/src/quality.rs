//! Average-quality analytics and tuning of the popularity exponent α.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::StablePoint;
use crate::error::{Error, Result};
use crate::model::{MarketConfig, Permutation, WinProbVector};
use crate::winprob::{stable_sum, MarketModel};

/// Default α search interval.
pub const DEFAULT_ALPHA_RANGE: (f64, f64) = (0.0, 10.0);

/// `q̄ = Σ i b_i`.
pub fn avg_quality(b: &WinProbVector) -> f64 {
    stable_sum(b.probs.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x))
}

/// `N - q̄ = Σ (N - i) b_i`, accurate even when `q̄` is within rounding of `N`.
pub fn quality_deficit(b: &WinProbVector) -> f64 {
    let n = b.len();
    stable_sum(b.probs.iter().enumerate().map(|(i, x)| (n - i - 1) as f64 * x))
}

fn check_nk(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Domain(format!("need 1 ≤ K ≤ N (K = {k}, N = {n})")));
    }
    Ok(())
}

/// `q̄` at α = 0 with repetition: `N - Σ_{i<N} (i/N)^K`.
pub fn q_min_with_rep(n: usize, k: usize) -> Result<f64> {
    check_nk(n, k)?;
    let nf = n as f64;
    Ok(nf - stable_sum((1..n).map(|i| (i as f64 / nf).powi(k as i32))))
}

/// `q̄` at α = 0 without repetition: `K (N + 1) / (K + 1)`.
pub fn q_min_without_rep(n: usize, k: usize) -> Result<f64> {
    check_nk(n, k)?;
    Ok(k as f64 * (n as f64 + 1.0) / (k as f64 + 1.0))
}

/// Share of selection mass on the K most popular ranks: `Σ_{i≤K} i^{-α} / Σ_{j≤N} j^{-α}`.
pub fn top_rank_mass(n: usize, k: usize, alpha: f64) -> f64 {
    let w = |i: usize| (i as f64).powf(-alpha);
    stable_sum((1..=k.min(n)).map(w)) / stable_sum((1..=n).map(w))
}

/// A desired winning-probability profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetDistribution {
    /// Exponent of the power law, or `None` for an arbitrary profile.
    pub beta: Option<f64>,
    pub probs: Vec<f64>,
    pub target_quality: f64,
}

impl TargetDistribution {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let b = WinProbVector::new(probs)?;
        Ok(TargetDistribution { beta: None, target_quality: avg_quality(&b), probs: b.probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// `b̃_i = (N - i + 1)^{-β} / Σ_j j^{-β}`.
pub fn target_distribution(n: usize, beta: f64) -> Result<TargetDistribution> {
    if n == 0 || !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Domain(format!("target needs N ≥ 1 and finite β ≥ 0 (N = {n}, β = {beta})")));
    }
    let norm = stable_sum((1..=n).map(|j| (j as f64).powf(-beta)));
    let probs: Vec<f64> = (1..=n).map(|i| ((n - i + 1) as f64).powf(-beta) / norm).collect();
    let target_quality = stable_sum(probs.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x));
    Ok(TargetDistribution { beta: Some(beta), probs, target_quality })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Hellinger,
    RelativeEntropy,
    Bhattacharyya,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Hellinger, Metric::RelativeEntropy, Metric::Bhattacharyya];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Hellinger => "hellinger",
            Metric::RelativeEntropy => "rel_entropy",
            Metric::Bhattacharyya => "bhattacharyya",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "hellinger" | "h" => Ok(Metric::Hellinger),
            "rel_entropy" | "relative_entropy" | "kl" | "kullback_leibler" => Ok(Metric::RelativeEntropy),
            "bhattacharyya" | "b" => Ok(Metric::Bhattacharyya),
            other => Err(Error::Domain(format!("unknown metric '{other}'"))),
        }
    }
}

/// Distance between two probability vectors of equal length.
pub fn distance_probs(b: &[f64], target: &[f64], metric: Metric) -> Result<f64> {
    if b.len() != target.len() {
        return Err(Error::Domain(format!("length mismatch: {} vs {}", b.len(), target.len())));
    }
    let pairs = b.iter().zip(target);
    Ok(match metric {
        Metric::Hellinger => {
            let s = stable_sum(pairs.map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)));
            (s / 2.0).sqrt()
        }
        Metric::RelativeEntropy => {
            let mut terms = Vec::with_capacity(b.len());
            for (i, (&x, &y)) in pairs.enumerate() {
                if x > 0.0 {
                    if y <= 0.0 {
                        return Err(Error::UndefinedDivergence { item: i + 1 });
                    }
                    terms.push(x * (x / y).ln());
                }
            }
            stable_sum(terms)
        }
        Metric::Bhattacharyya => -stable_sum(pairs.map(|(x, y)| (x * y).sqrt())).ln(),
    })
}

pub fn distance(b: &WinProbVector, target: &TargetDistribution, metric: Metric) -> Result<f64> {
    distance_probs(&b.probs, &target.probs, metric)
}

/// `Δq = |q̃ - q̄|`.
pub fn delta_q(b: &WinProbVector, target: &TargetDistribution) -> f64 {
    (target.target_quality - avg_quality(b)).abs()
}

/// Winning probabilities at the natural permutation for the template with `alpha`.
pub fn natural_win_probs(template: &MarketConfig, alpha: f64) -> Result<WinProbVector> {
    let cfg = template.clone().with_alpha(alpha);
    MarketModel::new(&cfg)?.win_probs(&Permutation::natural(cfg.n_items))
}

/// `q̄(α)` at the natural permutation (the equilibrium once K ≥ K_min).
pub fn q_bar_at(template: &MarketConfig, alpha: f64) -> Result<f64> {
    let cfg = template.clone().with_alpha(alpha);
    MarketModel::new(&cfg)?.perceived_average_quality(&Permutation::natural(cfg.n_items))
}

/// α in `range` with `|q̄(α) - target_q| < 1e-6 N`, by bisection on the increasing map α ↦ q̄(α).
pub fn optimize_alpha_for_quality(template: &MarketConfig, target_q: f64, range: (f64, f64)) -> Result<f64> {
    let (mut lo, mut hi) = range;
    if !(lo >= 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::Domain(format!("bad α range [{lo}, {hi}]")));
    }
    let tol = 1e-6 * template.n_items as f64;
    let q_lo = q_bar_at(template, lo)?;
    let q_hi = q_bar_at(template, hi)?;
    if !(target_q >= q_lo - tol && target_q <= q_hi + tol) {
        return Err(Error::TargetOutOfRange { target: target_q, low: q_lo, high: q_hi });
    }
    if (q_lo - target_q).abs() < tol {
        return Ok(lo);
    }
    if (q_hi - target_q).abs() < tol {
        return Ok(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let q = q_bar_at(template, mid)?;
        if (q - target_q).abs() < tol {
            return Ok(mid);
        }
        if q < target_q {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaOptimum {
    pub alpha: f64,
    pub value: f64,
}

/// Minimizes the chosen distance over α: grid scan, then golden-section search
/// between the neighbours of the best grid point.
pub fn optimize_alpha_for_distance(
    template: &MarketConfig,
    target: &TargetDistribution,
    metric: Metric,
    alpha_grid: &[f64],
) -> Result<AlphaOptimum> {
    if alpha_grid.is_empty() {
        return Err(Error::Domain("empty α grid".into()));
    }
    let f = |a: f64| -> Result<f64> { distance(&natural_win_probs(template, a)?, target, metric) };
    let values = alpha_grid.par_iter().map(|&a| f(a)).collect::<Result<Vec<f64>>>()?;
    let best = (0..values.len()).min_by(|&i, &j| values[i].total_cmp(&values[j])).expect("non-empty grid");
    let mut sorted: Vec<f64> = alpha_grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = sorted.partition_point(|&a| a < alpha_grid[best]);
    let lo = sorted[pos.saturating_sub(1)];
    let hi = sorted[(pos + 1).min(sorted.len() - 1)];
    let mut opt = AlphaOptimum { alpha: alpha_grid[best], value: values[best] };
    if hi > lo {
        let refined = golden_section(lo, hi, 1e-7, &f)?;
        if refined.value < opt.value {
            opt = refined;
        }
    }
    Ok(opt)
}

fn golden_section(mut a: f64, mut b: f64, tol: f64, f: &impl Fn(f64) -> Result<f64>) -> Result<AlphaOptimum> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc < fd { AlphaOptimum { alpha: c, value: fc } } else { AlphaOptimum { alpha: d, value: fd } })
}

/// One α of a quality scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityScanRow {
    pub alpha: f64,
    pub q_bar: f64,
    pub delta_q: f64,
    pub hellinger: f64,
    pub rel_entropy: f64,
    pub bhattacharyya: f64,
}

pub fn quality_scan(
    template: &MarketConfig,
    target: &TargetDistribution,
    alphas: &[f64],
) -> Result<Vec<QualityScanRow>> {
    alphas
        .par_iter()
        .map(|&alpha| {
            let b = natural_win_probs(template, alpha)?;
            Ok(QualityScanRow {
                alpha,
                q_bar: q_bar_at(template, alpha)?,
                delta_q: delta_q(&b, target),
                hellinger: distance(&b, target, Metric::Hellinger)?,
                rel_entropy: distance(&b, target, Metric::RelativeEntropy)?,
                bhattacharyya: distance(&b, target, Metric::Bhattacharyya)?,
            })
        })
        .collect()
}

/// `Q̄ = Σ_f a(f) q̄(f)` over fixed points carrying attractiveness (summing to one).
pub fn overall_quality_multiclass(points: &[StablePoint]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyStableSet);
    }
    let weights = points.iter().map(|p| p.attractiveness).collect::<Option<Vec<f64>>>();
    let weights = weights.ok_or(Error::MissingAttractiveness)?;
    if (stable_sum(weights.iter().copied()) - 1.0).abs() > 1e-9 {
        return Err(Error::MissingAttractiveness);
    }
    Ok(stable_sum(points.iter().zip(&weights).map(|(p, a)| a * p.q_bar)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub per_point: Vec<(Permutation, f64)>,
    pub overall: Option<f64>,
}

/// Per-point `q̄(f)` and, when attractiveness is known, the overall `Q̄`.
pub fn quality_report(points: &[StablePoint]) -> QualityReport {
    QualityReport {
        per_point: points.iter().map(|p| (p.perm.clone(), p.q_bar)).collect(),
        overall: overall_quality_multiclass(points).ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RepetitionMode::{WithRepetition, WithoutRepetition};
    use crate::winprob::win_probs_uniform;
    use approx::assert_abs_diff_eq;

    #[test]
    fn average_quality_values() {
        assert_abs_diff_eq!(avg_quality(&WinProbVector::new(vec![1.0 / 19.0; 19]).unwrap()), 10.0, epsilon = 1e-12);
        let mut top = vec![0.0; 7];
        top[6] = 1.0;
        assert_eq!(avg_quality(&WinProbVector::new(top).unwrap()), 7.0);
        let b = win_probs_uniform(4, 2).unwrap();
        assert_abs_diff_eq!(avg_quality(&b), 10.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(q_min_without_rep(4, 2).unwrap(), 10.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(quality_deficit(&b), 4.0 - 10.0 / 3.0, epsilon = 1e-14);
        let nearly_top = WinProbVector::new(vec![1e-20, 0.0, 1.0 - 1e-20]).unwrap();
        assert_eq!(avg_quality(&nearly_top), 3.0);
        assert_eq!(quality_deficit(&nearly_top), 2e-20);
    }

    /// Expected maximum of K i.i.d. uniform draws from 1..=N, by enumeration.
    fn max_of_draws(n: usize, k: u32) -> f64 {
        let total = (n as f64).powi(k as i32);
        let mut acc = 0.0;
        for code in 0..n.pow(k) {
            let mut c = code;
            let mut best = 0;
            for _ in 0..k {
                best = best.max(c % n + 1);
                c /= n;
            }
            acc += best as f64;
        }
        acc / total
    }

    #[test]
    fn minimum_quality_closed_forms() {
        assert_abs_diff_eq!(q_min_with_rep(2, 2).unwrap(), 1.75, epsilon = 1e-15);
        assert_abs_diff_eq!(q_min_with_rep(2, 1).unwrap(), 1.5, epsilon = 1e-15);
        for (n, k) in [(3, 2), (4, 3), (5, 2)] {
            assert_abs_diff_eq!(q_min_with_rep(n, k as usize).unwrap(), max_of_draws(n, k), epsilon = 1e-12);
        }
        let qs: Vec<f64> = (1..=10).map(|k| q_min_with_rep(10, k).unwrap()).collect();
        assert!(qs.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(q_min_without_rep(9, 9).unwrap(), 9.0);
        assert_eq!(q_min_without_rep(9, 1).unwrap(), 5.0);
        assert_eq!(q_min_without_rep(20, 5).unwrap(), 17.5);
        // q̄ at α = 0 is the uniform pre-selection value
        let cfg = MarketConfig::new(20, 5, 0.0, WithoutRepetition);
        assert_abs_diff_eq!(q_bar_at(&cfg, 0.0).unwrap(), 17.5, epsilon = 1e-10);
    }

    #[test]
    fn target_profiles() {
        let flat = target_distribution(6, 0.0).unwrap();
        assert!(flat.probs.iter().all(|&p| (p - 1.0 / 6.0).abs() < 1e-15));
        let sq = target_distribution(20, 2.0).unwrap();
        assert_abs_diff_eq!(sq.probs[19] / sq.probs[18], 4.0, epsilon = 1e-12);
        assert!(sq.probs.windows(2).all(|w| w[0] < w[1]));
        assert_abs_diff_eq!(sq.probs.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        assert!(target_distribution(20, 50.0).unwrap().probs[19] > 1.0 - 1e-12);
    }

    #[test]
    fn distance_values() {
        let t = target_distribution(5, 1.3).unwrap();
        let b = WinProbVector::new(t.probs.clone()).unwrap();
        for m in Metric::ALL {
            assert!(distance(&b, &t, m).unwrap().abs() < 1e-12);
        }
        assert_abs_diff_eq!(distance_probs(&[1.0, 0.0], &[0.0, 1.0], Metric::Hellinger).unwrap(), 1.0, epsilon = 1e-15);
        let re = distance_probs(&[0.5, 0.5], &[0.25, 0.75], Metric::RelativeEntropy).unwrap();
        assert_abs_diff_eq!(re, 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln(), epsilon = 1e-15);
        assert!(matches!(
            distance_probs(&[0.5, 0.5], &[1.0, 0.0], Metric::RelativeEntropy),
            Err(Error::UndefinedDivergence { item: 2 })
        ));
        assert_eq!(distance_probs(&[0.0, 1.0], &[0.5, 0.5], Metric::RelativeEntropy).unwrap(), 2f64.ln());
    }

    #[test]
    fn distance_symmetry() {
        let p = [0.1, 0.2, 0.7];
        let q = [0.3, 0.3, 0.4];
        for m in [Metric::Hellinger, Metric::Bhattacharyya] {
            assert_abs_diff_eq!(
                distance_probs(&p, &q, m).unwrap(),
                distance_probs(&q, &p, m).unwrap(),
                epsilon = 1e-15
            );
        }
        let a = distance_probs(&p, &q, Metric::RelativeEntropy).unwrap();
        let b = distance_probs(&q, &p, Metric::RelativeEntropy).unwrap();
        assert!((a - b).abs() > 1e-3);
    }

    #[test]
    fn quality_increases_with_alpha_and_k() {
        for k in [2, 3, 5, 8] {
            let cfg = MarketConfig::new(20, k, 0.0, WithRepetition);
            let qs: Vec<f64> = (0..=12).map(|i| q_bar_at(&cfg, i as f64 * 0.25).unwrap()).collect();
            assert!(qs.windows(2).all(|w| w[0] < w[1]), "K = {k}: {qs:?}");
        }
        for alpha in [0.0, 0.5, 1.0, 2.0] {
            let qs: Vec<f64> =
                (1..=10).map(|k| q_bar_at(&MarketConfig::new(20, k, alpha, WithRepetition), alpha).unwrap()).collect();
            assert!(qs.windows(2).all(|w| w[0] < w[1]), "α = {alpha}");
        }
        let cfg = MarketConfig::new(20, 5, 0.0, WithRepetition);
        assert!(q_bar_at(&cfg, 50.0).unwrap() > 20.0 - 1e-6);
    }

    #[test]
    fn top_rank_mass_grows_with_alpha() {
        let f: Vec<f64> = (0..=10).map(|i| top_rank_mass(20, 5, i as f64 * 0.5)).collect();
        assert!(f.windows(2).all(|w| w[0] < w[1]));
        assert_abs_diff_eq!(f[0], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn quality_bisection() {
        let cfg = MarketConfig::new(12, 3, 0.0, WithRepetition);
        let q0 = q_bar_at(&cfg, 0.0).unwrap();
        assert_eq!(optimize_alpha_for_quality(&cfg, q0, DEFAULT_ALPHA_RANGE).unwrap(), 0.0);
        let want = q_bar_at(&cfg, 1.234).unwrap();
        let a = optimize_alpha_for_quality(&cfg, want, DEFAULT_ALPHA_RANGE).unwrap();
        assert!((q_bar_at(&cfg, a).unwrap() - want).abs() < 1e-6 * 12.0);
        assert!((a - 1.234).abs() < 1e-3);
        assert!(q_bar_at(&cfg, a - 0.1).unwrap() < want && want < q_bar_at(&cfg, a + 0.1).unwrap());
        assert!(matches!(
            optimize_alpha_for_quality(&cfg, 1.0, DEFAULT_ALPHA_RANGE),
            Err(Error::TargetOutOfRange { .. })
        ));
    }

    #[test]
    fn distance_minimum_recovers_generating_alpha() {
        let cfg = MarketConfig::new(8, 3, 0.0, WithoutRepetition);
        let target = TargetDistribution::from_probs(natural_win_probs(&cfg, 0.7).unwrap().probs).unwrap();
        let grid: Vec<f64> = (0..=30).map(|i| i as f64 * 0.1).collect();
        for m in Metric::ALL {
            let opt = optimize_alpha_for_distance(&cfg, &target, m, &grid).unwrap();
            assert!((opt.alpha - 0.7).abs() < 0.1, "{m}: {opt:?}");
            for &a in &grid {
                assert!(opt.value <= distance(&natural_win_probs(&cfg, a).unwrap(), &target, m).unwrap() + 1e-15);
            }
        }
    }

    #[test]
    fn overall_quality() {
        let point = |q: f64, a: Option<f64>| StablePoint {
            perm: Permutation::natural(2),
            b: WinProbVector::new(vec![0.5, 0.5]).unwrap(),
            q_bar: q,
            has_tie: false,
            attractiveness: a,
        };
        assert_eq!(overall_quality_multiclass(&[point(8.0, Some(1.0))]).unwrap(), 8.0);
        assert_eq!(overall_quality_multiclass(&[point(8.0, Some(0.5)), point(6.0, Some(0.5))]).unwrap(), 7.0);
        assert!(matches!(overall_quality_multiclass(&[point(8.0, None)]), Err(Error::MissingAttractiveness)));
        assert!(matches!(overall_quality_multiclass(&[]), Err(Error::EmptyStableSet)));
        assert_eq!(quality_report(&[point(8.0, Some(1.0))]).overall, Some(8.0));
    }

    #[test]
    fn metric_names_parse() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert_eq!("relative-entropy".parse::<Metric>().unwrap(), Metric::RelativeEntropy);
    }
}
