use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("step index {t} out of range 0..={max}")]
    StepOutOfRange { t: usize, max: usize },

    #[error("invalid noise schedule: {0}")]
    Schedule(String),

    #[error("invalid world: {0}")]
    World(String),

    #[error("frequency band {lo}..{hi} out of range for dimension {dim}")]
    BandOutOfRange { lo: usize, hi: usize, dim: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("probability vector is not normalized (sum = {sum})")]
    NotNormalized { sum: f64 },

    #[error("non-finite log-potential at index {index}")]
    NonFinite { index: usize },

    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("empty probability vector")]
    EmptyProbabilities,

    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("invalid steering config: {0}")]
    Steering(String),

    #[error("rejection sampler acceptance rate {rate:.3e} after {tried} proposals is below 1e-6")]
    AcceptanceTooLow { rate: f64, tried: u64 },

    #[error("reward {reward} exceeds the declared upper bound {bound}")]
    RewardAboveBound { reward: f64, bound: f64 },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
