use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric failure at {cell}: {source}")]
    Numeric {
        cell: String,
        #[source]
        source: ridge_ood::Error,
    },

    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Argument(_) | Self::Output { .. } => 1,
            Self::Numeric { .. } => 2,
        }
    }

    pub fn numeric(cell: impl Into<String>) -> impl FnOnce(ridge_ood::Error) -> Self {
        let cell = cell.into();
        move |source| Self::Numeric { cell, source }
    }
}
