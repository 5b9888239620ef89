use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid meaning: {0}")]
    InvalidMeaning(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("could not draw an SL split covering every entity and action")]
    CoverageUnsatisfiable,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty utterance")]
    EmptyUtterance,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("inter_turn needs two distinct agents; use self_turn")]
    SameAgent,
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error("group size must be at least 2, got {0}")]
    GroupTooSmall(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
