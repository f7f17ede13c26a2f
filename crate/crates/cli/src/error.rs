use thiserror::Error;

/// CLI failures, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or flags; exit code 2.
    #[error("invalid configuration: {0}")]
    Validation(String),
    /// Failure while running or writing results; exit code 1.
    #[error("run failed: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    /// Engine errors caused by inputs count as validation failures.
    pub fn from_core(e: cpn_thermal::Error) -> Self {
        use cpn_thermal::Error as E;
        match e {
            E::InvalidParameter { .. }
            | E::Guard { .. }
            | E::DimensionMismatch { .. }
            | E::NotSquare { .. }
            | E::NotHermitian { .. }
            | E::ZeroVector
            | E::OutsideHull { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}
