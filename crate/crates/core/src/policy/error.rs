use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical state error: {0}")]
    Numerical(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("injected fault: {0}")]
    Injected(String),
}
