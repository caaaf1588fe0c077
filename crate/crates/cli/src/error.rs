use thiserror::Error;

/// Failure of a command, mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("hard predicate failed: {}", .0.join("; "))]
    HardPredicate(Vec<String>),

    #[error("reproducibility check failed: {0}")]
    Reproducibility(String),

    #[error(transparent)]
    Core(catalyst_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<catalyst_core::Error> for CliError {
    fn from(e: catalyst_core::Error) -> Self {
        use catalyst_core::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::Reproducibility(m) => CliError::Reproducibility(m),
            E::Io(io) => CliError::Io(io),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use catalyst_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::HardPredicate(_) => 3,
            CliError::Reproducibility(_) => 4,
            CliError::Core(e) => match e {
                E::InvalidDimension(_)
                | E::InvalidParameter(_)
                | E::InvalidKernel(_)
                | E::RecurrentKernel(_)
                | E::NotStronglyTransient(_)
                | E::EmptyBox
                | E::DomainError(_)
                | E::DimensionTooLow(_)
                | E::Parse(_)
                | E::Config(_) => 2,
                E::Reproducibility(_) => 4,
                _ => 1,
            },
            CliError::Io(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
