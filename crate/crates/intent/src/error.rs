use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] intent_core::Error),
    #[error("{0}")]
    Data(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Llm(#[from] crate::llm::LlmError),
}

impl Error {
    /// Process exit code: 1 usage, 2 data, 3 remote/transport.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Llm(_) => 3,
            Error::Core(_) | Error::Data(_) | Error::Io(_) => 2,
        }
    }
}
