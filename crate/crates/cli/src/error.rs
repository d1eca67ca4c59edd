use std::fmt;

use ccnet_core::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Internal = 1,
    Usage = 2,
}

/// A failure tagged with the exit status it maps to.
#[derive(Debug)]
pub struct CliError {
    status: ExitStatus,
    inner: anyhow::Error,
}

impl CliError {
    pub fn usage(e: impl Into<anyhow::Error>) -> Self {
        Self {
            status: ExitStatus::Usage,
            inner: e.into(),
        }
    }

    pub fn internal(e: impl Into<anyhow::Error>) -> Self {
        Self {
            status: ExitStatus::Internal,
            inner: e.into(),
        }
    }

    pub fn status(&self) -> ExitStatus {
        self.status
    }

    pub fn context(self, msg: impl fmt::Display + Send + Sync + 'static) -> Self {
        Self {
            status: self.status,
            inner: self.inner.context(msg),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if f.alternate() {
            write!(f, "{:#}", self.inner)
        } else {
            write!(f, "{}", self.inner)
        }
    }
}

/// Bad input (configuration, files, annotations) is a usage error; anything
/// else raised by the library is internal.
impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config { .. }
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::AnnotationOutOfRange { .. }
            | Error::UnknownParameter(_)
            | Error::EmptyEvaluation(_) => ExitStatus::Usage,
            Error::Dimension { .. }
            | Error::Geometry { .. }
            | Error::Contract(_)
            | Error::NonFiniteGradient(_) => ExitStatus::Internal,
        };
        Self {
            status,
            inner: e.into(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
