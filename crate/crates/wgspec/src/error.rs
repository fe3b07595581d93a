use std::fmt;

/// Errors produced by the library.
///
/// `Config` covers everything wrong with user input (files, flags, parameter
/// ranges); the remaining variants are numerical failures detected at run
/// time. The CLI maps the former to exit code 2 and the latter to 3.
#[derive(Debug)]
pub enum Error {
    /// Invalid configuration or user input.
    Config(String),
    /// Invalid argument to a library routine.
    Invalid(String),
    /// A factorization hit a pivot too small to trust.
    Singular { stage: &'static str, detail: String },
    /// The eigensolver stopped before reaching the requested accuracy.
    NoConvergence { wanted: usize, converged: usize, iterations: usize },
    /// Underlying I/O failure, with the path that caused it.
    Io { path: String, source: std::io::Error },
}

impl Error {
    /// True for errors that indicate bad input rather than a numerical
    /// breakdown.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Invalid(msg) => write!(f, "invalid argument: {msg}"),
            Error::Singular { stage, detail } => {
                write!(f, "singular matrix in {stage}: {detail}")
            }
            Error::NoConvergence { wanted, converged, iterations } => write!(
                f,
                "eigensolver converged {converged} of {wanted} pairs after {iterations} iterations"
            ),
            Error::Io { path, source } => write!(f, "{path}: {source}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
