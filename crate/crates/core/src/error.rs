use rhino_kernel::KernelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Kernel(#[from] KernelError),

    /// Inputs whose sizes disagree; the message names N, M, C as relevant.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Malformed graph or hypergraph structure (out-of-range node, singleton hyperedge, wrong kind).
    #[error("structural error: {0}")]
    Structural(String),

    #[error("config error: {0}")]
    Config(String),

    /// An embedding row with zero norm, for which cosine affinity is undefined.
    #[error("degenerate embedding: {0}")]
    Degenerate(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
