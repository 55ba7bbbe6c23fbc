use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AmcError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),
}

pub type Result<T> = std::result::Result<T, AmcError>;
