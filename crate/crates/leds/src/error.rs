use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Pool(#[from] leds_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{} already exists", .0.display())]
    AlreadyExists(PathBuf),
    #[error("{} is open through another handle", .0.display())]
    Locked(PathBuf),
    #[error("schema manifest: {0}")]
    Manifest(String),
    #[error("configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// The core error, if this wraps one.
    pub fn pool_error(&self) -> Option<&leds_core::Error> {
        match self {
            Error::Pool(e) => Some(e),
            _ => None,
        }
    }
}
