use std::path::{Path, PathBuf};

use fca_core::Error as CoreError;

pub type Result<T> = std::result::Result<T, Error>;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_IO: i32 = 4;
pub const EXIT_METRIC: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {source}", .path.display())]
    Image { path: PathBuf, source: image::ImageError },

    #[error("dataset index: {0}")]
    Index(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Core(CoreError::Config(_) | CoreError::InvalidParameter(_)) => EXIT_CONFIG,
            Error::Io { .. } | Error::Image { .. } | Error::Index(_) | Error::Core(CoreError::Format { .. }) => EXIT_IO,
            Error::Core(CoreError::UndefinedMetric(_)) => EXIT_METRIC,
            Error::Core(_) => EXIT_INPUT,
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn image(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
        move |source| Error::Image {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
