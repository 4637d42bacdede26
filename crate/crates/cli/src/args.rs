use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use popdyn_core::{Metric, Permutation, RepetitionMode, Strategy};

#[derive(Parser, Debug)]
#[command(name = "popdyn", version, about = "Popularity-biased market experiments")]
pub struct Cli {
    /// Worker threads for parallel sweeps (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Winning probabilities of every item at one popularity order.
    Winprob(WinprobArgs),
    /// Stable popularity orders of a market.
    Equilibria(EquilibriaArgs),
    /// Minimal discrimination level over an (α, N) grid.
    Kmin(KminArgs),
    /// Quality and fairness metrics over α, with optional optima.
    Optimize(OptimizeArgs),
    /// Urn simulation: traces, run statistics or time-to-stable-point sweeps.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

/// Market parameters; flags override values from `--config`.
#[derive(Args, Debug, Clone)]
pub struct MarketArgs {
    /// JSON market configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// JSON distribution of K: `{"2": 0.5, "3": 0.5}` or `[p_1, p_2, ...]`.
    #[arg(long = "k-dist")]
    pub k_dist: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// with-rep or without-rep.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<RepetitionMode>,
    /// Fraction of naive users.
    #[arg(long, allow_negative_numbers = true)]
    pub fm: Option<f64>,
    /// JSON list of user classes, or of quality orders (equal class probabilities).
    #[arg(long)]
    pub classes: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct WinprobArgs {
    #[command(flatten)]
    pub market: MarketArgs,
    /// Popularity order, least popular first (default: the natural order).
    #[arg(long, value_parser = parse_perm)]
    pub perm: Option<Permutation>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct EquilibriaArgs {
    #[command(flatten)]
    pub market: MarketArgs,
    /// exhaustive[:CAP], pruned[:M|auto] or randomized[:TRIALS].
    #[arg(long, value_parser = parse_strategy, default_value = "exhaustive")]
    pub strategy: Strategy,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Largest N for exhaustive enumeration and permutation graphs.
    #[arg(long)]
    pub cap: Option<usize>,
    /// Attach attractiveness from the full permutation graph.
    #[arg(long)]
    pub attractiveness: bool,
    /// Also write the permutation graph's edge list to this file.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct KminArgs {
    /// Item counts: `10`, `10,20,50` or a `start:stop:step` range.
    #[arg(long, default_value = "10")]
    pub n: String,
    /// α values: `1`, `0,0.5,1` or a `start:stop:step` range.
    #[arg(long, alias = "alphas", default_value = "0:2:0.25")]
    pub alpha: String,
    #[arg(long, value_parser = parse_mode, default_value = "with-rep")]
    pub mode: RepetitionMode,
    #[arg(long, default_value_t = 0.0)]
    pub fm: f64,
    /// Also compute K_min by evaluating the model (N ≤ 30).
    #[arg(long)]
    pub exact: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct OptimizeArgs {
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, value_parser = parse_mode, default_value = "without-rep")]
    pub mode: RepetitionMode,
    /// Fairness exponent of the target law.
    #[arg(long, value_parser = parse_beta, allow_negative_numbers = true)]
    pub beta: f64,
    /// α grid: list or `start:stop:step`.
    #[arg(long, default_value = "0:3:0.05")]
    pub alphas: String,
    /// Report the α minimizing this metric (or `all`) in JSON output.
    #[arg(long)]
    pub metric: Option<String>,
    /// Solve q̄(α) = target over [0, 10] instead of using the target law's quality.
    #[arg(long = "target-q")]
    pub target_q: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub market: MarketArgs,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub rounds: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub runs: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trace checkpoints: `log`, `every:N`, `final` or a comma list of rounds.
    #[arg(long, default_value = "log")]
    pub schedule: String,
    /// Track time to reach the stable points found by this strategy.
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    /// Sweep α and report median time to a stable point per value.
    #[arg(long)]
    pub alphas: Option<String>,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn parse_mode(s: &str) -> Result<RepetitionMode, String> {
    s.parse().map_err(|e: popdyn_core::Error| e.to_string())
}

fn parse_perm(s: &str) -> Result<Permutation, String> {
    s.parse().map_err(|e: popdyn_core::Error| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: popdyn_core::Error| e.to_string())
}

fn parse_beta(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(b) if b >= 0.0 && b.is_finite() => Ok(b),
        Ok(b) => Err(format!("β must be finite and non-negative, got {b}")),
        Err(e) => Err(e.to_string()),
    }
}

pub fn parse_metrics(s: &str) -> Result<Vec<Metric>, String> {
    if s == "all" {
        return Ok(Metric::ALL.to_vec());
    }
    s.split(',').map(|m| m.trim().parse().map_err(|e: popdyn_core::Error| e.to_string())).collect()
}

/// `a,b,c` or `start:stop:step` (inclusive of `stop` up to rounding).
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("bad number '{t}' in '{s}'"));
    match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(step > 0.0) || stop < start {
                return Err(format!("bad range '{s}'"));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize;
            // round away accumulated binary noise so grids print as typed
            Ok((0..=count).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect())
        }
        [_] => s.split(',').map(num).collect(),
        _ => Err(format!("bad grid '{s}'")),
    }
}

pub fn parse_counts(s: &str) -> Result<Vec<usize>, String> {
    parse_grid(s)?
        .into_iter()
        .map(|x| {
            if x >= 1.0 && x.fract() == 0.0 {
                Ok(x as usize)
            } else {
                Err(format!("item count {x} is not a positive integer"))
            }
        })
        .collect()
}
