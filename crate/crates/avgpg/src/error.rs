use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: field `{field}`: {message}")]
    ConfigInvalid { field: String, message: String },
    #[error(transparent)]
    Core(#[from] avgpg_core::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarnessError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::ConfigInvalid { field: field.into(), message: message.into() }
    }

    /// Maps a deserialization failure onto the offending field when serde
    /// names one.
    pub fn from_serde(err: serde_json::Error) -> Self {
        let text = err.to_string();
        let field = ["missing field `", "unknown field `"]
            .iter()
            .find_map(|prefix| text.split(prefix).nth(1).and_then(|rest| rest.split('`').next()))
            .unwrap_or("<document>");
        HarnessError::invalid(field, text.clone())
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), source }
    }

    pub fn field(&self) -> Option<&str> {
        match self {
            HarnessError::ConfigInvalid { field, .. } => Some(field),
            _ => None,
        }
    }
}
