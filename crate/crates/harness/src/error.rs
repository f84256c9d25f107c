use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl HarnessError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Invariant(_) => 3,
            HarnessError::Io(_) => 4,
        }
    }
}

impl From<batchreg::Error> for HarnessError {
    fn from(e: batchreg::Error) -> Self {
        use batchreg::Error as E;
        match e {
            E::InvalidParameter(_) | E::DimensionMismatch { .. } | E::OddOrder(_) | E::DimensionOverflow { .. } => {
                HarnessError::Config(e.to_string())
            }
            _ => HarnessError::Invariant(e.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
