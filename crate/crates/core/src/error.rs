use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by `{0}`")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid position ({x}, {y}) for a {side}x{side} grid")]
    InvalidPosition { x: usize, y: usize, side: usize },

    #[error("unknown {what} `{value}`")]
    Unknown { what: &'static str, value: String },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<S: Into<String>>(msg: S) -> Error {
    Error::Shape(msg.into())
}
