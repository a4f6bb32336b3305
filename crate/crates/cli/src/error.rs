use phrasemine::annotator::AnnotateError;
use phrasemine::text::TextError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("backend: {0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

impl From<TextError> for CliError {
    fn from(e: TextError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<AnnotateError> for CliError {
    fn from(e: AnnotateError) -> Self {
        if e.is_backend_failure() {
            CliError::Backend(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<phrasemine::bridge::BridgeError> for CliError {
    fn from(e: phrasemine::bridge::BridgeError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<phrasemine::eval::EvalError> for CliError {
    fn from(e: phrasemine::eval::EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}
