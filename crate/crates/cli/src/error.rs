use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("service judged a copy (p = {p_value:e}) on a run expected to be clean")]
    UnexpectedCopy { p_value: f64 },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::UnexpectedCopy { .. } => 4,
        }
    }
}

impl From<espew_core::Error> for CliError {
    fn from(e: espew_core::Error) -> Self {
        use espew_core::Error as E;
        match e {
            E::Config(_) | E::Capacity { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
