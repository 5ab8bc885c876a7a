use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("infinite event rate: {0}")]
    InfiniteRate(String),
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("event at time {time} outside window ({start}, {end}]")]
    EventOutsideWindow { time: f64, start: f64, end: f64 },
    #[error("inconsistent state: {0}")]
    Inconsistent(String),
    #[error("coalescent did not reach its most recent common ancestor within {0} events")]
    NoMrca(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
