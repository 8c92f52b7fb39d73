use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid interval: {0}")]
    InvalidInterval(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid expression: {0}")]
    InvalidExpression(String),
    #[error("invalid integral: {0}")]
    InvalidSpec(String),
    #[error("partition mismatch: {0}")]
    PartitionMismatch(String),
    #[error("missing driver: {0}")]
    MissingDriver(String),
    #[error("node index {index} out of range 0..={max}")]
    IndexOutOfRange { index: usize, max: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown identity: {0}")]
    UnknownIdentity(String),
    #[error("malformed path dump: {0}")]
    MalformedDump(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
