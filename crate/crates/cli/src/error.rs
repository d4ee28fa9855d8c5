use thiserror::Error;

/// Process exit codes.
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_ACCEPTANCE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numeric(String),
    #[error("acceptance failure: {0}")]
    Acceptance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Acceptance(_) => EXIT_ACCEPTANCE,
        }
    }
}

impl From<cardiodx_core::Error> for CliError {
    fn from(e: cardiodx_core::Error) -> Self {
        match e {
            cardiodx_core::Error::Numeric(_) | cardiodx_core::Error::InsufficientData(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<cardiodx_hprnet::Error> for CliError {
    fn from(e: cardiodx_hprnet::Error) -> Self {
        match e {
            cardiodx_hprnet::Error::Numeric { .. } | cardiodx_hprnet::Error::Diverged { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
