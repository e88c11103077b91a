use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: enasep::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("png: {0}")]
    Image(#[from] image::ImageError),
}

impl CliError {
    pub fn stage(stage: &'static str) -> impl FnOnce(enasep::Error) -> CliError {
        move |source| CliError::Stage { stage, source }
    }

    pub fn io(path: impl AsRef<std::path::Path>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.as_ref().display().to_string();
        move |source| CliError::Io { path, source }
    }

    /// Stage that failed, or `config`/`io` for plumbing errors.
    pub fn stage_name(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Stage { stage, .. } => stage,
            CliError::Io { .. } | CliError::Image(_) => "io",
            CliError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
