use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("price must be positive and finite, got {0}")]
    NonPositivePrice(f64),
    #[error("trust {trust} outside bounds [{min}, {max}]")]
    TrustOutOfBounds { trust: f64, min: f64, max: f64 },
    #[error("ad spend must be non-negative and finite, got {0}")]
    NegativeAdSpend(f64),
    #[error("action contains a non-finite field")]
    NonFiniteAction,
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid constraint set: {0}")]
    Constraints(String),
    #[error("invalid setting: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum CausalError {
    #[error("need at least {required} observations, got {got}")]
    InsufficientData { required: usize, got: usize },
    #[error("treatment column `{0}` has no variance left after residualization")]
    DegenerateTreatment(String),
    #[error("engine has not been fitted")]
    NotFitted,
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
    #[error("observation {row} has a non-finite field")]
    NonFinite { row: usize },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("unsupported artifact version {found} (expected {expected})")]
    ArtifactVersion { found: u32, expected: u32 },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("architecture {0} requires a causal engine")]
    MissingEngine(&'static str),
    #[error("architecture {0} requires a guardian")]
    MissingGuardian(&'static str),
    #[error("strategist returned {got} candidates, expected {expected}")]
    CandidateCount { expected: usize, got: usize },
    #[error("strategist: {0}")]
    Strategist(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Causal(#[from] CausalError),
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("empty episode log")]
    EmptyLog,
    #[error("nothing to run: {0}")]
    EmptyMatrix(&'static str),
    #[error("unknown {kind} `{value}`")]
    Unknown { kind: &'static str, value: String },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Causal(#[from] CausalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
