use std::fmt;

/// Failure of a command, carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, bad or missing inputs. Exit code 2.
    Input(String),
    /// Reading or writing files failed. Exit code 3.
    Io(String),
    /// A training run produced non-finite values. Exit code 4.
    Diverged(String),
    /// Verification ran but at least one check failed. Exit code 1.
    ChecksFailed(String),
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Io(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::ChecksFailed(_) | CliError::Internal(_) => 1,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Diverged(m) => write!(f, "{m}"),
            CliError::ChecksFailed(m) => write!(f, "{m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<rwlab_core::Error> for CliError {
    fn from(e: rwlab_core::Error) -> Self {
        use rwlab_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Diverged { .. } => CliError::Diverged(msg),
            E::Io(_) => CliError::Io(msg),
            E::Csv(ref c) if c.is_io_error() => CliError::Io(msg),
            E::Autodiff(_) => CliError::Internal(msg),
            _ => CliError::Input(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches the path to an I/O failure.
pub fn io_at<T>(path: &std::path::Path, r: std::io::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
