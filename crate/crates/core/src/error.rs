use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid filterbank layout: {0}")]
    Layout(String),

    #[error("filter design failed: {0}")]
    Design(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },

    #[error("band index {index} out of range for a bank of {bands} bands")]
    BandIndex { index: usize, bands: usize },

    #[error("degenerate normalisation range for `{0}`: every value is equal")]
    DegenerateRange(String),
}
