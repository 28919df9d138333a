use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Engine(#[from] conformer_nas::Error),
}

impl CliError {
    /// Process exit status: 2 config, 3 runtime or divergence, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        use conformer_nas::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 4,
            CliError::Engine(E::Io(_)) => 4,
            CliError::Engine(
                E::UnknownOperation { .. } | E::Parse { .. } | E::InvalidArgument(_),
            ) => 2,
            CliError::Engine(_) => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
