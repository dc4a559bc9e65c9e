use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bin width {0} min: must divide 1440")]
    InvalidBinWidth(u32),

    #[error("bin index {index} out of range for {bins_per_day} bins per day")]
    BinOutOfRange { index: u32, bins_per_day: u32 },

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("unknown station `{0}`")]
    UnknownStation(String),

    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("invalid variance: {0}")]
    Variance(String),

    #[error("no observation yet: classification needs at least one bin")]
    NoObservation,

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("optimizer produced a non-finite objective for {0}")]
    Optimizer(String),

    #[error("share period does not contain bin {bin}")]
    PeriodMismatch { bin: u32 },

    #[error("simulation error: {0}")]
    Simulation(String),

    #[error("gate closure plan error: {0}")]
    Plan(String),

    #[error("missing models for stations: {0:?}")]
    MissingModels(Vec<String>),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
