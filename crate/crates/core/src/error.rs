use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed model or config input. `field` is a JSON-path-like locator.
    #[error("invalid input at `{field}`: {message}")]
    Input { field: String, message: String },

    #[error("state index {index} out of range (model has {states} states)")]
    StateOutOfRange { index: usize, states: usize },

    #[error("generator violation at x = {x}: {message}")]
    Generator { x: f64, message: String },

    #[error("grid error: {0}")]
    Grid(String),

    /// Zero drift, zero noise, no switching and no killing: mass never leaves the cell.
    #[error("absorbing trap in band {band} for state {state}: sigma = 0, mu = 0, no outgoing rate and q = 0")]
    Trap { band: usize, state: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("coupling invariant broken: {0}")]
    Coupling(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn input(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Input {
            field: field.into(),
            message: message.into(),
        }
    }
}
