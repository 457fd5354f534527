use std::path::{Path, PathBuf};

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] physdetect::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path} is not a trained model artifact: {reason}")]
    NotAModel { path: PathBuf, reason: String },
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// 3 for an infeasible tuning budget, 1 for numerical failures during
    /// training or search, 2 for everything the user can fix in the inputs.
    pub fn exit_code(&self) -> i32 {
        use physdetect::Error as E;
        match self {
            CliError::Core(E::InfeasibleTuning { .. }) => 3,
            CliError::Core(E::Diverged { .. } | E::NonFiniteGradient(_)) => 1,
            _ => 2,
        }
    }

    /// Next step to suggest alongside the message.
    pub fn hint(&self) -> Option<&'static str> {
        use physdetect::Error as E;
        match self {
            CliError::Core(E::InfeasibleTuning { .. }) => {
                Some("raise tuning.tau_max, add longer windows or allow more false alarms (tuning.fp_max)")
            }
            CliError::Core(E::Untrained) | CliError::NotAModel { .. } => {
                Some("produce a model with `physdetect fit <pca|wpca|uae|cnn>` first")
            }
            CliError::Core(E::Diverged { .. }) => Some("lower detector.train.learning_rate"),
            CliError::Io { .. } => Some("check the path, or set it in the [data] section of the config"),
            _ => None,
        }
    }
}
