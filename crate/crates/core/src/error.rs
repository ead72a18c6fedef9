use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its invariant. `field` is the config key.
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input records are malformed or inconsistent with the protocol.
    #[error("data error{}: {message}", location(*.trial_id, *.offset))]
    Data {
        message: String,
        trial_id: Option<u64>,
        offset: Option<u64>,
    },

    /// An estimator cannot be evaluated on the available data.
    #[error("analysis error: {0}")]
    Analysis(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn location(trial_id: Option<u64>, offset: Option<u64>) -> String {
    match (trial_id, offset) {
        (Some(t), Some(o)) => format!(" (trial {t}, byte offset {o})"),
        (Some(t), None) => format!(" (trial {t})"),
        (None, Some(o)) => format!(" (byte offset {o})"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn domain(message: impl Into<String>) -> Self {
        Error::Domain(message.into())
    }

    pub fn analysis(message: impl Into<String>) -> Self {
        Error::Analysis(message.into())
    }

    pub fn data(message: impl Into<String>) -> Self {
        Error::Data {
            message: message.into(),
            trial_id: None,
            offset: None,
        }
    }

    pub fn data_in_trial(trial_id: u64, message: impl Into<String>) -> Self {
        Error::Data {
            message: message.into(),
            trial_id: Some(trial_id),
            offset: None,
        }
    }

    pub fn data_at_offset(offset: u64, message: impl Into<String>) -> Self {
        Error::Data {
            message: message.into(),
            trial_id: None,
            offset: Some(offset),
        }
    }
}
