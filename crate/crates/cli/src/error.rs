use std::fmt;

/// Failures grouped by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad or missing input files and flags (exit 2).
    Config(String),
    /// The run itself failed: a fit, a write (exit 3).
    Runtime(String),
    /// Calibration targets cannot be met, or verification failed (exit 4).
    Calibration(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Calibration(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
            CliError::Calibration(m) => write!(f, "calibration error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}
