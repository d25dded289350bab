use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] hrmedseg_core::Error),
    #[error(transparent)]
    Tensor(#[from] hrmedseg_tensor::TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Check(String),
}

pub type Result<T> = std::result::Result<T, Error>;
