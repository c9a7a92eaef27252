use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    /// Shapes that do not line up. `context` names the operation or layer.
    #[error("dimension error in {context}: {detail}")]
    Dimension { context: String, detail: String },

    /// A scalar argument outside its admissible range (tau <= 0, sigma <= 0, ...).
    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl KernelError {
    pub fn dim(context: impl Into<String>, detail: impl Into<String>) -> Self {
        KernelError::Dimension {
            context: context.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, KernelError>;
