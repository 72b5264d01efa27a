use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{module}: configuration error: {msg}")]
    Config { module: &'static str, msg: String },
    #[error("data-io: decode error at byte {offset}: {msg}")]
    Decode { offset: usize, msg: String },
    #[error("data-io: {}: decode error at byte {offset}: {msg}", path.display())]
    DecodeFile { path: PathBuf, offset: usize, msg: String },
    #[error("data-io: {0}")]
    Data(String),
    #[error("data-io: {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] bfanet_core::Error),
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn config(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Config {
            module,
            msg: msg.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn contract(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Core(bfanet_core::Error::contract(module, msg))
    }

    /// Attaches a file name to decode errors.
    pub fn in_file(self, path: &Path) -> Self {
        match self {
            Error::Decode { offset, msg } => Error::DecodeFile {
                path: path.to_path_buf(),
                offset,
                msg,
            },
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        }
    }

    /// 1 usage or configuration, 2 data or decode, 3 contract violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config { .. } => 1,
            Error::Decode { .. } | Error::DecodeFile { .. } | Error::Data(_) | Error::Io { .. } => 2,
            Error::Core(_) => 3,
        }
    }
}
