use thiserror::Error;

/// A violated [`MarketConfig`](crate::MarketConfig) invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("market must contain at least one item")]
    NoItems,
    #[error("alpha must be a finite non-negative number, got {0}")]
    InvalidAlpha(f64),
    #[error("K must be at least 1")]
    ZeroK,
    #[error("K exceeds N (K = {k}, N = {n})")]
    KExceedsN { k: usize, n: usize },
    #[error("K distribution is empty")]
    EmptyKDistribution,
    #[error("K distribution key '{0}' is not a positive integer")]
    InvalidKKey(String),
    #[error("K distribution has negative or non-finite mass at k = {k}")]
    NegativeKMass { k: usize },
    #[error("K distribution sum ≠ 1 (sum = {sum})")]
    KDistributionSum { sum: f64 },
    #[error("K distribution support exceeds N (k = {k}, N = {n})")]
    KDistributionBeyondN { k: usize, n: usize },
    #[error("naive fraction must lie in [0, 1], got {0}")]
    NaiveFraction(f64),
    #[error("at least one user class is required")]
    NoClasses,
    #[error("class probabilities sum ≠ 1 (sum = {sum})")]
    ClassProbabilitySum { sum: f64 },
    #[error("class {class} has a negative or non-finite probability")]
    NegativeClassProbability { class: usize },
    #[error("quality order of class {class} is not a permutation of 1..={n}")]
    NotAPermutation { class: usize, n: usize },
    #[error("initial weights must list {n} positive entries")]
    InitialWeights { n: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid permutation: {0}")]
    Permutation(String),
    #[error("enumeration budget exceeded: {required} terms required, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u128 },
    #[error("exhaustive search over N = {n} items exceeds the cap of {cap}")]
    CapExceeded { n: usize, cap: usize },
    #[error("K distribution support does not match the supplied winning probabilities")]
    SupportMismatch,
    #[error("relative entropy undefined: target is zero at item {item} where b > 0")]
    UndefinedDivergence { item: usize },
    #[error("target average quality {target} outside achievable range [{low}, {high}]")]
    TargetOutOfRange { target: f64, low: f64, high: f64 },
    #[error("permutation {0} is not a fixed point of the B-map")]
    NotAFixedPoint(String),
    #[error("attractiveness missing or not summing to 1")]
    MissingAttractiveness,
    #[error("stable point set is empty")]
    EmptyStableSet,
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("no K up to {limit} satisfies the K_min condition")]
    KminNotFound { limit: u64 },
}

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Permutation(_) => "permutation",
            Error::BudgetExceeded { .. } => "budget_exceeded",
            Error::CapExceeded { .. } => "cap_exceeded",
            Error::SupportMismatch => "support_mismatch",
            Error::UndefinedDivergence { .. } => "undefined_divergence",
            Error::TargetOutOfRange { .. } => "target_out_of_range",
            Error::NotAFixedPoint(_) => "not_a_fixed_point",
            Error::MissingAttractiveness => "missing_attractiveness",
            Error::EmptyStableSet => "empty_stable_set",
            Error::Domain(_) => "domain",
            Error::KminNotFound { .. } => "kmin_not_found",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
