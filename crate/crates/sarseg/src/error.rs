use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("manifest entry {index}: {message}")]
    ManifestEntry { index: usize, message: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("file not found: {0}")]
    MissingFile(PathBuf),
}

impl Error {
    /// Classifies errors for CLI exit codes: validation problems (bad config,
    /// bad manifest, bad data) exit 1, runtime failures exit 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Manifest(_)
                | Error::ManifestEntry { .. }
                | Error::Data(_)
                | Error::MissingFile(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
