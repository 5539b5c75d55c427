use std::io;
use std::path::Path;

use barw_core::BarwError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] BarwError),

    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    /// 2 for bad input, 1 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                BarwError::UnsupportedDimension(_)
                | BarwError::BallTooLarge { .. }
                | BarwError::TorusTooSmall { .. }
                | BarwError::Domain { .. }
                | BarwError::NotDivisible { .. }
                | BarwError::NotContraction { .. }
                | BarwError::Invalid(_) => 2,
                _ => 1,
            },
            CliError::Io { .. } => 1,
        }
    }
}
