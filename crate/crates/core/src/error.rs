use thiserror::Error;

use crate::config::Violation;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid configuration: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidConfig(Vec<Violation>),
    #[error("trace parse error at line {line}: {message}")]
    TraceParse { line: usize, message: String },
    #[error("trace validation error: {0}")]
    TraceInvalid(String),
    #[error("workload error: {0}")]
    Workload(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("simulation stalled: {0}")]
    Deadlock(String),
    #[error("simulation exceeded {0} cycles")]
    Timeout(u64),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}
