use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite value in {direction} pass at block {block}")]
    NonFinite {
        direction: &'static str,
        block: usize,
    },
    #[error("neighborhood {0} is empty")]
    EmptyNeighborhood(usize),
    #[error("no prior statistics fitted for neighborhood {0}")]
    PriorNotFitted(usize),
    #[error("{0}")]
    Clustering(String),
    #[error("{metric}: {detail}")]
    Metric {
        metric: &'static str,
        detail: String,
    },
    #[error("{path}: {detail}")]
    Data { path: String, detail: String },
    #[error("training diverged at epoch {epoch}, neighborhood {neighborhood}: {detail}")]
    Diverged {
        epoch: usize,
        neighborhood: usize,
        detail: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
