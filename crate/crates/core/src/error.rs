use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("loss `{0}` is not in the catalog")]
    NotInCatalog(String),
    #[error("loss weight must be positive and finite, got {0}")]
    InvalidWeight(f64),
    #[error("{what} is not supported for `{name}`")]
    Unsupported { name: &'static str, what: &'static str },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CoreError {
    fn from(e: std::io::Error) -> Self {
        CoreError::Io(e.to_string())
    }
}

impl From<csv::Error> for CoreError {
    fn from(e: csv::Error) -> Self {
        CoreError::Io(e.to_string())
    }
}
