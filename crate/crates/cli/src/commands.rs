use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use popdyn_core::equilibrium::{enumerate_stable_points, DEFAULT_EXHAUSTIVE_CAP};
use popdyn_core::kmin::kmin_sweep;
use popdyn_core::quality::{
    optimize_alpha_for_distance, optimize_alpha_for_quality, quality_scan, target_distribution, AlphaOptimum,
    DEFAULT_ALPHA_RANGE,
};
use popdyn_core::simulator::{run_experiment, simulate_run_stream, time_to_stable_point};
use popdyn_core::{
    CheckpointSchedule, Error, KDistribution, MarketConfig, MarketModel, Permutation, PermutationGraph, RepetitionMode,
    StablePointSet, Strategy, UserClass,
};
use serde::{Deserialize, Serialize};

use crate::args::{
    parse_counts, parse_grid, parse_metrics, Command, EquilibriaArgs, Format, KminArgs, MarketArgs, OptimizeArgs,
    OutputArgs, SimulateArgs, WinprobArgs,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Model(Error),
    Io(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Model(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Winprob(a) => winprob(a),
        Command::Equilibria(a) => equilibria(a),
        Command::Kmin(a) => kmin(a),
        Command::Optimize(a) => optimize(a),
        Command::Simulate(a) => simulate(a),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad {what} file {}: {e}", path.display())))
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ClassesFile {
    Classes(Vec<UserClass>),
    Orders(Vec<Vec<usize>>),
}

/// The config file (if any) with flags applied on top, validated.
fn market_config(m: &MarketArgs) -> CliResult<MarketConfig> {
    let mut cfg = match &m.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            MarketConfig::from_json(&text)?
        }
        None => {
            let n = m.n.ok_or_else(|| CliError::Usage("--n is required without --config".into()))?;
            if m.k.is_none() && m.k_dist.is_none() {
                return Err(CliError::Usage("--k or --k-dist is required without --config".into()));
            }
            MarketConfig::new(n, m.k.unwrap_or(1), 0.0, RepetitionMode::WithoutRepetition)
        }
    };
    if let Some(n) = m.n {
        if n != cfg.n_items {
            cfg.n_items = n;
            cfg.classes = vec![UserClass::identity(n, 1.0)];
            cfg.initial_weights = vec![1; n];
        }
    }
    if let Some(k) = m.k {
        cfg = cfg.with_k(k);
    }
    if let Some(path) = &m.k_dist {
        cfg = cfg.with_k_distribution(read_json::<KDistribution>(path, "K distribution")?);
    }
    if let Some(alpha) = m.alpha {
        cfg.alpha = alpha;
    }
    if let Some(mode) = m.mode {
        cfg.repetition_mode = mode;
    }
    if let Some(fm) = m.fm {
        cfg.naive_fraction = fm;
    }
    if let Some(path) = &m.classes {
        let classes = match read_json::<ClassesFile>(path, "classes")? {
            ClassesFile::Classes(c) => c,
            ClassesFile::Orders(orders) => {
                let c = orders.len() as f64;
                orders.into_iter().map(|o| UserClass { class_probability: 1.0 / c, quality_order: o }).collect()
            }
        };
        cfg = cfg.with_classes(classes);
    }
    Ok(popdyn_core::validate_config(&cfg)?)
}

fn sink(out: &OutputArgs) -> CliResult<Box<dyn Write>> {
    Ok(match &out.out {
        Some(path) => {
            Box::new(BufWriter::new(File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(out: &OutputArgs, value: &T) -> CliResult<()> {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn csv_writer(out: &OutputArgs) -> CliResult<csv::Writer<Box<dyn Write>>> {
    Ok(csv::Writer::from_writer(sink(out)?))
}

fn opt_cell<T: ToString>(v: Option<T>, missing: &str) -> String {
    v.map_or_else(|| missing.to_string(), |x| x.to_string())
}

fn winprob(a: WinprobArgs) -> CliResult<()> {
    let cfg = market_config(&a.market)?;
    let perm = a.perm.unwrap_or_else(|| Permutation::natural(cfg.n_items));
    let model = MarketModel::new(&cfg)?;
    let b = model.win_probs(&perm)?;
    match a.output.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut w = csv_writer(&a.output)?;
            w.write_record(["item_id", "b"])?;
            for (i, x) in b.probs.iter().enumerate() {
                w.write_record([(i + 1).to_string(), x.to_string()])?;
            }
            w.flush()?;
        }
        Format::Json => {
            let q_bar = model.perceived_average_quality(&perm)?;
            write_json(&a.output, &serde_json::json!({ "perm": perm, "b": b.probs, "q_bar": q_bar }))?;
        }
    }
    Ok(())
}

fn equilibria(a: EquilibriaArgs) -> CliResult<()> {
    let cfg = market_config(&a.market)?;
    let cap = a.cap.unwrap_or(DEFAULT_EXHAUSTIVE_CAP);
    let strategy = match a.strategy {
        Strategy::Exhaustive { cap: c } => Strategy::Exhaustive { cap: a.cap.unwrap_or(c) },
        Strategy::Randomized { trials, seed } => {
            Strategy::Randomized { trials: a.trials.unwrap_or(trials), seed: a.seed.unwrap_or(seed) }
        }
        s => s,
    };
    let mut set = enumerate_stable_points(&cfg, strategy)?;
    if a.attractiveness || a.edges.is_some() {
        let graph = PermutationGraph::build(&cfg, cap)?;
        if a.attractiveness {
            set.attach_attractiveness(&graph)?;
        }
        if let Some(path) = &a.edges {
            let f = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let mut w = BufWriter::new(f);
            graph.write_edge_list(&mut w)?;
            w.flush()?;
        }
    }
    match a.output.format.unwrap_or(Format::Json) {
        Format::Json => write_json(&a.output, &set)?,
        Format::Csv => write_stable_csv(&a.output, &set)?,
    }
    Ok(())
}

fn write_stable_csv(out: &OutputArgs, set: &StablePointSet) -> CliResult<()> {
    let mut w = csv_writer(out)?;
    let mut header = vec!["perm".to_string(), "q_bar".into(), "attractiveness".into()];
    header.extend((1..=set.n_items).map(|i| format!("b_{i}")));
    w.write_record(&header)?;
    for p in &set.points {
        let mut row = vec![p.perm.to_string(), p.q_bar.to_string(), opt_cell(p.attractiveness, "")];
        row.extend(p.b.probs.iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn kmin(a: KminArgs) -> CliResult<()> {
    let alphas = parse_grid(&a.alpha).map_err(CliError::Usage)?;
    let ns = parse_counts(&a.n).map_err(CliError::Usage)?;
    let rows = kmin_sweep(&alphas, &ns, a.mode, a.fm, a.exact)?;
    match a.output.format.unwrap_or(Format::Csv) {
        Format::Json => write_json(&a.output, &rows)?,
        Format::Csv => {
            let mut w = csv_writer(&a.output)?;
            w.write_record(["alpha", "n_items", "mode", "naive_fraction", "k_min", "k_min_exact"])?;
            for r in rows {
                w.write_record([
                    r.alpha.to_string(),
                    r.n_items.to_string(),
                    r.mode.to_string(),
                    r.naive_fraction.to_string(),
                    opt_cell(r.k_min, "none"),
                    opt_cell(r.k_min_exact, ""),
                ])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct OptimizeReport {
    n_items: usize,
    k: usize,
    mode: RepetitionMode,
    beta: f64,
    target_quality: f64,
    /// α with q̄(α) equal to the target quality, when reachable.
    quality_alpha: Option<f64>,
    optima: BTreeMap<&'static str, AlphaOptimum>,
    rows: Vec<popdyn_core::quality::QualityScanRow>,
}

fn optimize(a: OptimizeArgs) -> CliResult<()> {
    let alphas = parse_grid(&a.alphas).map_err(CliError::Usage)?;
    let template = popdyn_core::validate_config(&MarketConfig::new(a.n, a.k, 0.0, a.mode))?;
    let target = target_distribution(a.n, a.beta)?;
    let rows = quality_scan(&template, &target, &alphas)?;
    match a.output.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            let mut w = csv_writer(&a.output)?;
            w.write_record(["alpha", "q_bar", "delta_q", "hellinger", "rel_entropy", "bhattacharyya"])?;
            for r in &rows {
                w.write_record(
                    [r.alpha, r.q_bar, r.delta_q, r.hellinger, r.rel_entropy, r.bhattacharyya].map(|x| x.to_string()),
                )?;
            }
            w.flush()?;
        }
        Format::Json => {
            let target_q = a.target_q.unwrap_or(target.target_quality);
            let quality_alpha = match optimize_alpha_for_quality(&template, target_q, DEFAULT_ALPHA_RANGE) {
                Ok(x) => Some(x),
                // an explicit target must be reachable; the target law's own may not be
                Err(Error::TargetOutOfRange { .. }) if a.target_q.is_none() => None,
                Err(e) => return Err(e.into()),
            };
            let metrics = match &a.metric {
                Some(m) => parse_metrics(m).map_err(CliError::Usage)?,
                None => Vec::new(),
            };
            let optima = metrics
                .into_iter()
                .map(|m| Ok((m.name(), optimize_alpha_for_distance(&template, &target, m, &alphas)?)))
                .collect::<CliResult<BTreeMap<_, _>>>()?;
            write_json(
                &a.output,
                &OptimizeReport {
                    n_items: a.n,
                    k: a.k,
                    mode: a.mode,
                    beta: a.beta,
                    target_quality: target_q,
                    quality_alpha,
                    optima,
                    rows,
                },
            )?;
        }
    }
    Ok(())
}

fn parse_schedule(s: &str) -> CliResult<CheckpointSchedule> {
    let bad = || CliError::Usage(format!("bad checkpoint schedule '{s}'"));
    Ok(match s {
        "log" => CheckpointSchedule::Log125,
        "final" => CheckpointSchedule::FinalOnly,
        _ => match s.strip_prefix("every:") {
            Some(n) => CheckpointSchedule::Every(n.parse().map_err(|_| bad())?),
            None => CheckpointSchedule::Explicit(
                s.split(',').map(|r| r.trim().parse()).collect::<Result<_, _>>().map_err(|_| bad())?,
            ),
        },
    })
}

/// Default stable-point search for hitting times: exhaustive when small, randomized otherwise.
fn stable_search(cfg: &MarketConfig, strategy: Option<Strategy>, seed: u64) -> CliResult<StablePointSet> {
    let strategy = strategy.unwrap_or(if cfg.n_items <= 8 {
        Strategy::Exhaustive { cap: DEFAULT_EXHAUSTIVE_CAP }
    } else {
        Strategy::Randomized { trials: 500, seed }
    });
    Ok(enumerate_stable_points(cfg, strategy)?)
}

#[derive(Serialize)]
struct MedianRow {
    alpha: f64,
    stable_points: usize,
    runs: usize,
    rounds: u64,
    median_hit_round: Option<f64>,
    median_first_hit_round: Option<f64>,
    unconverged: usize,
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let cfg = market_config(&a.market)?;
    let runs = a.runs as usize;
    if let Some(grid) = &a.alphas {
        let alphas = parse_grid(grid).map_err(CliError::Usage)?;
        let mut rows = Vec::new();
        for alpha in alphas {
            let cfg = popdyn_core::validate_config(&cfg.clone().with_alpha(alpha))?;
            let set = stable_search(&cfg, a.strategy, a.seed)?;
            let (median_hit_round, median_first_hit_round, unconverged) = if set.is_empty() {
                (None, None, runs)
            } else {
                let s = time_to_stable_point(&cfg, runs, a.rounds, a.seed, &set)?;
                (s.median_hit_round, s.median_first_hit_round, s.unconverged)
            };
            rows.push(MedianRow {
                alpha,
                stable_points: set.len(),
                runs,
                rounds: a.rounds,
                median_hit_round,
                median_first_hit_round,
                unconverged,
            });
        }
        return match a.output.format.unwrap_or(Format::Csv) {
            Format::Json => write_json(&a.output, &rows),
            Format::Csv => {
                let mut w = csv_writer(&a.output)?;
                w.write_record([
                    "alpha",
                    "stable_points",
                    "runs",
                    "rounds",
                    "median_hit_round",
                    "median_first_hit_round",
                    "unconverged",
                ])?;
                for r in rows {
                    w.write_record([
                        r.alpha.to_string(),
                        r.stable_points.to_string(),
                        r.runs.to_string(),
                        r.rounds.to_string(),
                        opt_cell(r.median_hit_round, "none"),
                        opt_cell(r.median_first_hit_round, "none"),
                        r.unconverged.to_string(),
                    ])?;
                }
                w.flush()?;
                Ok(())
            }
        };
    }

    let stable = match a.strategy {
        Some(s) => Some(stable_search(&cfg, Some(s), a.seed)?),
        None => None,
    };
    if runs == 1 {
        let schedule = parse_schedule(&a.schedule)?;
        let trace = simulate_run_stream(&cfg, a.rounds, a.seed, 0, &schedule, stable.as_ref())?;
        match a.output.format.unwrap_or(Format::Csv) {
            Format::Json => write_json(&a.output, &trace)?,
            Format::Csv => {
                let mut w = csv_writer(&a.output)?;
                w.write_record(["round", "item_id", "weight", "normalized_weight"])?;
                for r in trace.rows() {
                    w.write_record([
                        r.round.to_string(),
                        r.item_id.to_string(),
                        r.weight.to_string(),
                        r.normalized_weight.to_string(),
                    ])?;
                }
                w.flush()?;
            }
        }
        return Ok(());
    }
    let (stats, _) = run_experiment(&cfg, a.rounds, runs, a.seed, stable.as_ref())?;
    match a.output.format.unwrap_or(Format::Json) {
        Format::Json => write_json(&a.output, &stats)?,
        Format::Csv => {
            let mut w = csv_writer(&a.output)?;
            w.write_record(["item_id", "win_frequency", "std_error", "final_top_count"])?;
            for i in 0..cfg.n_items {
                w.write_record([
                    (i + 1).to_string(),
                    stats.win_frequencies[i].to_string(),
                    stats.win_std_errors[i].to_string(),
                    stats.final_top_counts[i].to_string(),
                ])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
