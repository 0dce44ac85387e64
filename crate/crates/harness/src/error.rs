use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("unsupported format_version {found}, expected {expected}")]
    FormatVersion { expected: u32, found: u32 },

    #[error("no successful grid point for algorithm {algorithm} at p = {p}")]
    EmptyCell { algorithm: String, p: usize },

    #[error(transparent)]
    Core(#[from] pdmd_core::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
