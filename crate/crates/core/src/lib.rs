//! Popularity-biased recommendation markets: winning probabilities, stable
//! popularity orders, minimal discrimination levels, quality metrics and a
//! Monte-Carlo urn simulator.

pub mod equilibrium;
pub mod error;
pub mod kmin;
pub mod model;
pub mod quality;
pub mod simulator;
pub mod winprob;

pub use equilibrium::{BMapResult, PermutationGraph, StablePoint, StablePointSet, Strategy};
pub use error::{ConfigError, Error, Result};
pub use kmin::KminQuery;
pub use model::{
    compute_ranks, factorial, rank_win_probs, rank_with_tiebreak, validate_config, Discrimination, KDistribution,
    MarketConfig, Permutation, RankVector, RepetitionMode, UserClass, WeightVector, WinProbVector,
};
pub use quality::{Metric, TargetDistribution};
pub use simulator::{CheckpointSchedule, RunStatistics, UrnTrace};
pub use winprob::{MarketModel, SelectionProbVector};
