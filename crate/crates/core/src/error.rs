use alloc::string::String;
use core::fmt;

/// Failure raised by any operation in this crate.
///
/// Contract violations carry the name of the module that rejected the call so
/// front ends can report a module-qualified diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    Contract { module: &'static str, msg: String },
    NonFinite { op: &'static str },
}

impl Error {
    pub fn contract(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Contract {
            module,
            msg: msg.into(),
        }
    }

    pub fn module(&self) -> &'static str {
        match self {
            Error::Contract { module, .. } => module,
            Error::NonFinite { .. } => "tensor-core",
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Contract { module, msg } => write!(f, "{module}: contract violation: {msg}"),
            Error::NonFinite { op } => write!(f, "tensor-core: non-finite value produced by {op}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! ensure {
    ($cond:expr, $module:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::contract($module, alloc::format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
