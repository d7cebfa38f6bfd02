use thiserror::Error;

/// Process exit codes.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] tdcbf::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Core(tdcbf::Error::Io(_) | tdcbf::Error::Wav(_)) => EXIT_IO,
            CliError::Core(_) => EXIT_CONFIG,
            CliError::Io(_) | CliError::Csv(_) | CliError::Json(_) => EXIT_IO,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_code_mapping() {
        let numerical = tdcbf::Error::NumericalDivergence {
            frame: 3,
            bin: 1,
            source_index: 0,
            what: "nan".into(),
        };
        assert_eq!(CliError::from(numerical).exit_code(), EXIT_NUMERICAL);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(CliError::from(tdcbf::Error::Io(io)).exit_code(), EXIT_IO);
        assert_eq!(CliError::from(tdcbf::Error::Config("x".into())).exit_code(), EXIT_CONFIG);
        assert_eq!(CliError::config("x").exit_code(), EXIT_CONFIG);
    }
}
