//! Process exit codes by failure class.

use clothrecon_core::Error;

use crate::config::ConfigError;
use crate::lock::LockError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureClass {
    Config,
    Io,
    Numeric,
    Other,
}

impl FailureClass {
    pub fn code(self) -> u8 {
        match self {
            FailureClass::Other => 1,
            FailureClass::Config => 2,
            FailureClass::Io => 3,
            FailureClass::Numeric => 4,
        }
    }
}

/// Classifies by the outermost cause that has a class; per-element batch
/// errors defer to their source.
pub fn classify(err: &anyhow::Error) -> FailureClass {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return FailureClass::Config;
        }
        if cause.is::<LockError>() || cause.is::<std::io::Error>() {
            return FailureClass::Io;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return classify_core(e);
        }
    }
    FailureClass::Other
}

fn classify_core(e: &Error) -> FailureClass {
    match e {
        Error::Batch { source, .. } => classify_core(source),
        Error::Io { .. } | Error::Format { .. } | Error::Json(_) | Error::Image(_) | Error::Csv(_) => FailureClass::Io,
        Error::Parameter(_) | Error::Construction(_) | Error::ResolutionMismatch(..) => FailureClass::Config,
        e if e.is_numeric() => FailureClass::Numeric,
        _ => FailureClass::Other,
    }
}
