use std::path::PathBuf;

/// Errors surfaced by every module of the workbench.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate denominator: a+d-b-c must be positive (got {0})")]
    DegenerateDenominator(f64),
    #[error("value outside its domain: {0}")]
    Domain(String),
    #[error("insufficient trials")]
    InsufficientTrials,
    #[error("population size must be ≥ 1")]
    EmptyPopulationSize,
    #[error("invalid payoff matrix: {0}")]
    InvalidPayoff(String),
    #[error("episode already finished; call reset first")]
    EpisodeFinished,
    #[error("invalid action {action} (expected < {n_actions})")]
    InvalidAction { action: usize, n_actions: usize },
    #[error("shape mismatch for {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid value head {head} (network has {heads})")]
    InvalidHead { head: usize, heads: usize },
    #[error("backward called without a recorded forward pass")]
    NoForward,
    #[error("empty rollout buffer")]
    EmptyBuffer,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("population is empty")]
    EmptyPopulation,
    #[error("opponent set is empty")]
    EmptyOpponentSet,
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error("weight list has {got} entries but population size is {expected}")]
    ListLength { expected: usize, got: usize },
    #[error("unknown event counter `{0}`")]
    UnknownEvent(String),
    #[error("no {kind} registered under `{name}`")]
    Unregistered { kind: &'static str, name: String },
    #[error("missing trajectory: {0}")]
    MissingTrajectory(PathBuf),
    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config serialization error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
