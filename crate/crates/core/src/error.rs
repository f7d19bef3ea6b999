use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by diverging or NaN-producing numerics, as
    /// opposed to bad inputs or unreadable data.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Numerical(_))
    }

    /// Prefixes the message with `stage`, keeping the variant.
    pub fn context(self, stage: &str) -> Error {
        match self {
            Error::InvalidInput(m) => Error::InvalidInput(format!("{stage}: {m}")),
            Error::Shape(m) => Error::Shape(format!("{stage}: {m}")),
            Error::NonFinite(m) => Error::NonFinite(format!("{stage}: {m}")),
            Error::Numerical(m) => Error::Numerical(format!("{stage}: {m}")),
            Error::Data(m) => Error::Data(format!("{stage}: {m}")),
            Error::Config(m) => Error::Config(format!("{stage}: {m}")),
            Error::Io(e) => Error::Io(std::io::Error::new(e.kind(), format!("{stage}: {e}"))),
            Error::Json(e) => Error::Data(format!("{stage}: {e}")),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what}[{i}] = {}", values[i])));
    }
    Ok(())
}
