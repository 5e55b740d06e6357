//! Engine-wide error type and exit-code mapping.

use thiserror::Error;

/// All failures the engine can report.
///
/// The CLI maps each variant to a process exit code: data problems exit 1,
/// configuration problems exit 2, numerical failures exit 3.
#[derive(Debug, Error)]
pub enum EngineError {
    /// Bad or missing input data (audio, labels, manifests, model inputs).
    #[error("data error: {0}")]
    Data(String),

    /// Invalid configuration value or unknown key.
    #[error("configuration error: {0}")]
    Config(String),

    /// Numerical failure (singular system, diverged training, non-finite loss).
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A caller violated an API contract (shape or length mismatch).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed model file. `offset` is the byte position of the bad field.
    #[error("model format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl EngineError {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            EngineError::Config(_) => 2,
            EngineError::Numerical(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, EngineError>;

pub(crate) fn data_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(EngineError::Data(msg.into()))
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(EngineError::Config(msg.into()))
}

pub(crate) fn numerical_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(EngineError::Numerical(msg.into()))
}

pub(crate) fn contract_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(EngineError::Contract(msg.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(EngineError::Data("x".into()).exit_code(), 1);
        assert_eq!(EngineError::Config("x".into()).exit_code(), 2);
        assert_eq!(EngineError::Numerical("x".into()).exit_code(), 3);
        assert_eq!(EngineError::Contract("x".into()).exit_code(), 1);
        assert_eq!(
            EngineError::Format {
                offset: 4,
                msg: "bad magic".into()
            }
            .exit_code(),
            1
        );
    }
}
