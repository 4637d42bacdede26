//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). The process exits 0 unless
//! `ACCEPTANCE_STRICT=1` is set, in which case any FAIL gives a nonzero exit.

use std::time::Instant;

use num_rational::Ratio;
use popdyn_core::equilibrium::{enumerate_stable_points, randomized_search};
use popdyn_core::kmin::{kmin_exact_enumeration, kmin_with_rep, kmin_without_rep_approx, ExactMethod};
use popdyn_core::quality::{
    natural_win_probs, optimize_alpha_for_distance, optimize_alpha_for_quality, quality_deficit, target_distribution,
    DEFAULT_ALPHA_RANGE,
};
use popdyn_core::simulator::{estimate_win_frequencies, frozen_state_frequencies, simulate_run, time_to_stable_point};
use popdyn_core::winprob::{preselection_sequence_prob, rank_selection_probs, win_probs_uniform, win_probs_with_rep};
use popdyn_core::{
    CheckpointSchedule, Error, KminQuery, MarketConfig, Metric, Permutation, PermutationGraph, RankVector,
    RepetitionMode::{WithRepetition, WithoutRepetition},
    Strategy, UserClass,
};

type Outcome = Result<(bool, String), Error>;

fn perm(s: &str) -> Permutation {
    Permutation::new(s.split(',').map(|x| x.trim().parse().unwrap()).collect()).unwrap()
}

/// The three quality orders of the multi-class scenario, lowest to highest quality.
const CLASS_ORDERS: [[usize; 10]; 3] =
    [[6, 8, 5, 10, 9, 2, 3, 7, 4, 1], [4, 2, 3, 6, 10, 8, 5, 9, 1, 7], [8, 10, 1, 5, 3, 4, 9, 2, 6, 7]];

fn classes(c: usize) -> Vec<UserClass> {
    CLASS_ORDERS[..c]
        .iter()
        .map(|o| UserClass { class_probability: 1.0 / c as f64, quality_order: o.to_vec() })
        .collect()
}

fn ac1() -> Outcome {
    // Exact oracle: b_i = s_i^K - s_{i-1}^K in rational arithmetic, p_r = (1/r)/G.
    let exact = |order: &[usize]| -> Vec<Ratio<i64>> {
        let n = order.len();
        // rank of each item: order is most-popular-first
        let mut p = vec![Ratio::from_integer(0); n];
        let g: Ratio<i64> = (1..=n as i64).map(|r| Ratio::new(1, r)).sum();
        for (r, &item) in order.iter().enumerate() {
            p[item - 1] = Ratio::new(1, r as i64 + 1) / g;
        }
        let mut s = Ratio::from_integer(0);
        let mut prev = Ratio::from_integer(0);
        p.iter()
            .map(|&pi| {
                s += pi;
                let cur = s * s;
                let b = cur - prev;
                prev = cur;
                b
            })
            .collect()
    };
    let cases = [(vec![3, 2, 1], [(4, 121), (21, 121), (96, 121)]), (vec![2, 3, 1], [(4, 121), (60, 121), (57, 121)])];
    let mut ok = true;
    let mut worst = 0.0f64;
    for (order, want) in cases {
        let rat = exact(&order);
        let b = win_probs_with_rep(&Permutation::from_most_popular_first(order).unwrap(), 1.0, 2)?;
        for i in 0..3 {
            let w = Ratio::new(want[i].0, want[i].1);
            ok &= rat[i] == w;
            let err = (b.probs[i] - want[i].0 as f64 / want[i].1 as f64).abs();
            worst = worst.max(err);
        }
    }
    ok &= worst < 1e-12;
    Ok((ok, format!("rational oracle exact, max float error {worst:.1e}")))
}

fn ac2() -> Outcome {
    let cfg = MarketConfig::new(4, 2, 1.0, WithRepetition);
    let g = PermutationGraph::build(&cfg, 10)?;
    let mut fixed: Vec<Permutation> = g.fixed_points()?.into_iter().map(|p| p.perm).collect();
    fixed.sort();
    let mut want = vec![perm("1,2,3,4"), perm("1,2,4,3"), perm("1,4,3,2")];
    want.sort();
    let stable: Vec<Permutation> = g.stable_points()?.into_iter().map(|p| p.perm).collect();
    let a =
        [g.attractiveness(&perm("1,2,3,4"))?, g.attractiveness(&perm("1,2,4,3"))?, g.attractiveness(&perm("1,4,3,2"))?];
    let sizes =
        [g.component_size(&perm("1,2,3,4")), g.component_size(&perm("1,2,4,3")), g.component_size(&perm("1,4,3,2"))];
    let ok = fixed == want
        && stable == vec![perm("1,2,3,4"), perm("1,2,4,3")]
        && sizes == [Some(12), Some(8), Some(4)]
        && a == [1.0 / 2.0, 1.0 / 3.0, 1.0 / 6.0];
    Ok((ok, format!("{} fixed, {} stable, component sizes {:?} of 24", fixed.len(), stable.len(), sizes)))
}

fn ac3() -> Outcome {
    let cfg = MarketConfig::new(10, 2, 1.0, WithoutRepetition);
    let want = ["1,2,3,4,5,6,7,8,9,10", "1,2,3,4,5,6,7,8,10,9", "1,2,3,4,5,6,7,9,8,10", "1,2,3,4,5,6,7,10,9,8"]
        .map(perm)
        .to_vec();
    let t = Instant::now();
    let full = enumerate_stable_points(&cfg, Strategy::Exhaustive { cap: 10 })?;
    let full_secs = t.elapsed().as_secs_f64();
    let pruned = enumerate_stable_points(&cfg, Strategy::PrunedAuto)?;
    let ok = full.perms() == want && pruned.perms() == want;
    Ok((
        ok,
        format!(
            "exhaustive: {} stable of {} explored ({full_secs:.1}s); pruned: {} stable of {} explored",
            full.len(),
            full.explored,
            pruned.len(),
            pruned.explored
        ),
    ))
}

fn ac4() -> Outcome {
    let table: Vec<u64> = [0.0, 0.5, 1.0, 2.0]
        .iter()
        .map(|&a| kmin_with_rep(&KminQuery::new(10, a, WithRepetition)))
        .collect::<Result<_, _>>()?;
    let mut ok = table == [2, 3, 4, 4];
    let mut worst_exact = 0;
    for n in 2..=19 {
        let e = kmin_exact_enumeration(&KminQuery::new(n, 1.0, WithoutRepetition), ExactMethod::default())?;
        worst_exact = worst_exact.max(e);
    }
    ok &= worst_exact <= 3;
    let approx50 = kmin_without_rep_approx(&KminQuery::new(50, 1.0, WithoutRepetition))?;
    ok &= approx50 == 4;
    let (mut compared, mut infeasible, mut disagree) = (0, 0, Vec::new());
    for n in 2..=19 {
        for step in 0..=20 {
            let alpha = step as f64 * 0.25;
            let q = KminQuery::new(n, alpha, WithoutRepetition);
            let exact = match kmin_exact_enumeration(&q, ExactMethod::default()) {
                Ok(k) => k,
                Err(Error::KminNotFound { .. }) => {
                    infeasible += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let approx = kmin_without_rep_approx(&q)?;
            compared += 1;
            if approx.abs_diff(exact) > 1 {
                disagree.push((n, alpha, approx, exact));
            }
        }
    }
    ok &= disagree.is_empty();
    Ok((
        ok,
        format!(
            "with-rep N=10 {table:?}; exact max over N<=19 at α=1: {worst_exact}; approx N=50: {approx50}; \
             approx vs exact: {compared} compared, {infeasible} infeasible, off by >1 (N, α, approx, exact): {disagree:?}"
        ),
    ))
}

fn ac5() -> Outcome {
    let ranks = RankVector::new(vec![5, 2, 1, 3, 4])?;
    let p = preselection_sequence_prob(&ranks, &[2, 4, 3], 1.0)?;
    Ok(((p - 0.028).abs() <= 0.001, format!("P = {p:.5}")))
}

fn ac6() -> Outcome {
    let template = MarketConfig::new(20, 5, 0.0, WithoutRepetition);
    let target = target_distribution(20, 2.0)?;
    let root = optimize_alpha_for_quality(&template, target.target_quality, DEFAULT_ALPHA_RANGE)?;
    let grid: Vec<f64> = (0..=60).map(|i| i as f64 * 0.05).collect();
    let mut ok = (root - 0.40).abs() <= 0.02;
    let mut detail = format!("Δq root α={root:.4}");
    for metric in Metric::ALL {
        let opt = optimize_alpha_for_distance(&template, &target, metric, &grid)?;
        let hit = (opt.alpha - 0.58).abs() <= 0.02;
        ok &= hit;
        detail.push_str(&format!(
            "; {} min α={:.4}{}",
            metric.name(),
            opt.alpha,
            if hit { "" } else { " (out of band)" }
        ));
    }
    Ok((ok, detail))
}

fn ac7() -> Outcome {
    let with = |n: usize, a: f64| kmin_with_rep(&KminQuery::new(n, a, WithRepetition));
    let approx100 = kmin_without_rep_approx(&KminQuery::new(100, 10.0, WithoutRepetition))?;
    let (k20, k5) = (with(10, 20.0)?, with(10, 5.0)?);
    let (big, small) = (with(10_000, 0.5)?, with(100, 0.5)?);
    let zero: Vec<u64> = [2, 10, 1000].iter().map(|&n| with(n, 0.0)).collect::<Result<_, _>>()?;
    let ok = approx100 == 2 && k20 >= k5 && big > small && zero == [2, 2, 2];
    Ok((
        ok,
        format!(
            "approx(N=100,α=10)={approx100}; N=10: α=20→{k20}, α=5→{k5}; α=0.5: N=1e4→{big}, N=100→{small}; α=0: {zero:?}"
        ),
    ))
}

fn ac8() -> Outcome {
    let cfg = MarketConfig::new(10, 2, 0.0, WithoutRepetition);
    let stats = estimate_win_frequencies(&cfg, 1_000_000, 100, 20_240_601)?;
    let ordered = (stats.ordered_fraction * 100.0).round() as usize;
    let b = win_probs_uniform(10, 2)?;
    let mut worst = 0.0f64;
    let mut ok = ordered >= 99;
    for i in 0..10 {
        let (f, se) = (stats.win_frequencies[i], stats.win_std_errors[i]);
        if b.probs[i] == 0.0 {
            ok &= f == 0.0;
        } else {
            let z = (f - b.probs[i]).abs() / se;
            worst = worst.max(z);
            ok &= z <= 3.0;
        }
    }
    Ok((ok, format!("{ordered}/100 runs ordered; max |z| = {worst:.2} over the closed-form b")))
}

fn ac9() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    // q̄ increasing ⇔ N − q̄ decreasing; the deficit stays resolvable where q̄
    // itself rounds to N.
    let deficit = |k: usize, alpha: f64, mode| -> Result<f64, Error> {
        Ok(quality_deficit(&natural_win_probs(&MarketConfig::new(20, k, alpha, mode), alpha)?))
    };
    let alphas: Vec<f64> = (0..=20).map(|i| i as f64 * 0.25).collect();
    for mode in [WithRepetition, WithoutRepetition] {
        let d: Vec<f64> = alphas.iter().map(|&a| deficit(5, a, mode)).collect::<Result<_, _>>()?;
        let inc = d.windows(2).all(|w| w[1] < w[0]);
        ok &= inc;
        notes.push(format!("q̄(α) {}: {}", mode.short_name(), if inc { "increasing" } else { "NOT increasing" }));
    }
    for mode in [WithRepetition, WithoutRepetition] {
        for alpha in [0.0, 0.5, 1.0, 2.0] {
            let d: Vec<f64> = (1..=20).map(|k| deficit(k, alpha, mode)).collect::<Result<_, _>>()?;
            let inc = d.windows(2).all(|w| w[1] < w[0]);
            ok &= inc;
            if !inc {
                notes.push(format!("q̄(K) {} α={alpha} NOT increasing: deficits {d:?}", mode.short_name()));
            }
        }
    }
    notes.push("q̄(K) checked at N=20, K=1..20".into());
    let ratio = |a: f64| {
        let p = rank_selection_probs(20, a);
        p[..5].iter().sum::<f64>()
    };
    let r: Vec<f64> = (0..=10).map(|i| ratio(i as f64 * 0.5)).collect();
    let inc = r.windows(2).all(|w| w[1] > w[0]);
    ok &= inc;
    notes.push(format!("top-mass ratio {}", if inc { "increasing" } else { "NOT increasing" }));
    for alpha in [0.0, 0.5, 1.0, 2.0] {
        let mut qs = Vec::new();
        for k in 1..=10 {
            let cfg = MarketConfig::new(10, k, alpha, WithRepetition).with_classes(classes(1));
            qs.push(PermutationGraph::build(&cfg, 10)?.overall_quality()?);
        }
        let inc = qs.windows(2).all(|w| w[1] > w[0]);
        ok &= inc;
        notes.push(format!(
            "Q̄(K) α={alpha}: {}{}",
            qs.iter().map(|q| format!("{q:.3}")).collect::<Vec<_>>().join(" "),
            if inc { "" } else { " NOT inc" }
        ));
    }
    Ok((ok, notes.join("; ")))
}

fn ac10() -> Outcome {
    const DRAWS: u64 = 100_000;
    let (mut comparisons, mut outside, mut zero_violations, mut worst) = (0, Vec::new(), 0, 0.0f64);
    let mut seed = 1000;
    for mode in [WithRepetition, WithoutRepetition] {
        for &alpha in &[0.0, 0.5, 1.0, 2.0] {
            for n in 2..=6 {
                for k in 1..=3.min(n) {
                    let cfg = MarketConfig::new(n, k, alpha, mode);
                    let natural = Permutation::natural(n);
                    let b = popdyn_core::MarketModel::new(&cfg)?.win_probs(&natural)?;
                    seed += 1;
                    let est = frozen_state_frequencies(&cfg, &natural, DRAWS, seed)?;
                    for i in 0..n {
                        let bi = b.probs[i];
                        if bi == 0.0 {
                            zero_violations += usize::from(est.counts[i] != 0);
                            continue;
                        }
                        comparisons += 1;
                        let se = (bi * (1.0 - bi) / DRAWS as f64).sqrt();
                        let z = (est.frequencies[i] - bi).abs() / se;
                        worst = worst.max(z);
                        if z > 3.0 {
                            outside.push(format!(
                                "{}/α={alpha}/N={n}/K={k}/item {} z={z:.2}",
                                mode.short_name(),
                                i + 1
                            ));
                        }
                    }
                }
            }
        }
    }
    let cfg = MarketConfig::new(6, 3, 1.0, WithoutRepetition).with_naive_fraction(0.1);
    let a = simulate_run(&cfg, 50_000, 99, &CheckpointSchedule::Log125)?;
    let b = simulate_run(&cfg, 50_000, 99, &CheckpointSchedule::Log125)?;
    let reproducible = a == b;
    let ok = outside.is_empty() && zero_violations == 0 && reproducible;
    let expected_false = comparisons as f64 * 0.0027;
    Ok((
        ok,
        format!(
            "{comparisons} comparisons (≈{expected_false:.1} expected beyond 3 SE by chance), {} beyond: [{}]; \
             zero-b violations {zero_violations}; max |z| {worst:.2}; bit-exact rerun: {reproducible}",
            outside.len(),
            outside.join(", ")
        ),
    ))
}

fn first_argmax(v: &[u64]) -> usize {
    let m = *v.iter().max().unwrap();
    v.iter().position(|&x| x == m).unwrap()
}

fn kendall_tau(y: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut pairs = 0.0;
    for i in 0..y.len() {
        for j in i + 1..y.len() {
            s += (y[j] - y[i]).signum();
            pairs += 1.0;
        }
    }
    s / pairs
}

fn ac11() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();

    // K_min curves: the first peak over α lies in (0, 1].
    let grid: Vec<f64> = (0..=80).map(|i| i as f64 * 0.05).collect();
    for n in [10usize, 100, 1000, 10_000] {
        let curve: Vec<u64> = grid
            .iter()
            .map(|&a| kmin_without_rep_approx(&KminQuery::new(n, a, WithoutRepetition)))
            .collect::<Result<_, _>>()?;
        let peak = grid[first_argmax(&curve)];
        let hit = peak > 0.0 && peak <= 1.0;
        ok &= hit;
        notes.push(format!("N={n} K_min peak α={peak:.2} (K_min {})", curve.iter().max().unwrap()));
    }

    // Median time to a stable point, N=10, K=5, without repetition.
    // α values without any tie-free fixed point have no stable point to reach and
    // are reported but left out of the trend.
    let alphas: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    for c in 1..=3 {
        let mut curve = Vec::new();
        let mut skipped = Vec::new();
        let mut first = Vec::new();
        for &alpha in &alphas {
            let cfg = MarketConfig::new(10, 5, alpha, WithoutRepetition).with_classes(classes(c));
            let stable = randomized_search(&cfg, 500, 77)?;
            if stable.is_empty() {
                skipped.push(alpha);
                continue;
            }
            let stats = time_to_stable_point(&cfg, 201, 100_000, 4242, &stable)?;
            curve.push((alpha, stable.len(), stats.median_hit_round.unwrap_or(f64::INFINITY)));
            first.push(stats.median_first_hit_round.unwrap_or(f64::INFINITY));
        }
        let medians: Vec<f64> = curve.iter().map(|c| c.2).collect();
        let tau = kendall_tau(&medians);
        let hit = tau > 0.0 && medians[medians.len() - 1] > medians[0];
        ok &= hit;
        notes.push(format!(
            "C={c} median by α [{}] τ={tau:.2}{}; first-match medians (diagnostic) [{}] τ={:.2}",
            curve.iter().map(|(a, k, m)| format!("{a:.1}:{m:.0}({k}sp)")).collect::<Vec<_>>().join(" "),
            if skipped.is_empty() { String::new() } else { format!(", no stable point at α={skipped:?}") },
            first.iter().map(|m| format!("{m:.0}")).collect::<Vec<_>>().join(" "),
            kendall_tau(&first)
        ));
    }
    let cfg = MarketConfig::new(10, 5, 0.7, WithoutRepetition).with_classes(classes(3));
    let two = enumerate_stable_points(&cfg, Strategy::Exhaustive { cap: 10 })?.len();
    ok &= two == 2;
    notes.push(format!("C=3 α=0.7: {two} stable points"));

    // Trajectory flattening: C=3, K=5, α=0.5, 10^6 rounds on the 1-2-5 schedule.
    let cfg = MarketConfig::new(10, 5, 0.5, WithoutRepetition).with_classes(classes(3));
    let trace = simulate_run(&cfg, 1_000_000, 2024, &CheckpointSchedule::Log125)?;
    let last: Vec<_> = trace.checkpoints.iter().filter(|c| c.round >= 100_000).collect();
    let step_change = last
        .windows(2)
        .flat_map(|w| w[0].normalized.iter().zip(&w[1].normalized).map(|(a, b)| (a - b).abs()))
        .fold(0.0f64, f64::max);
    let decade_change = last[0]
        .normalized
        .iter()
        .zip(&last[last.len() - 1].normalized)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    ok &= step_change < 1e-3;
    notes.push(format!(
        "trajectory max change between consecutive checkpoints in [1e5,1e6]: {step_change:.2e} (1e5→1e6 overall {decade_change:.2e})"
    ));
    Ok((ok, notes.join("; ")))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("AC1", ac1),
        ("AC2", ac2),
        ("AC3", ac3),
        ("AC4", ac4),
        ("AC5", ac5),
        ("AC6", ac6),
        ("AC7", ac7),
        ("AC8", ac8),
        ("AC9", ac9),
        ("AC10", ac10),
        ("AC11", ac11),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with("AC")).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == name) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!("{name} {} ({:.1}s) {detail}", if pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
    }
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
