use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller broke a shape or length contract (mismatched grids, wrong lengths).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Argument outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid or unsupported configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A model cannot answer a query needed by the requested check variant.
    #[error("capability error: model `{model}` does not support {what}")]
    Capability { model: String, what: String },

    /// A model or solver produced a non-finite value.
    #[error("runtime model error at step {step}: {message} (state = {state:?})")]
    Model {
        step: usize,
        state: Vec<f64>,
        message: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
