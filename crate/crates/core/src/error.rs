use thiserror::Error;

use crate::pipeline::RunMetrics;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("duplicate publish of sample `{sample_id}` at trigger {trigger}")]
    DuplicatePublish { trigger: u64, sample_id: String },

    #[error("stale ack for message {message_id} (delivery {delivery})")]
    StaleAck { message_id: u64, delivery: u32 },

    #[error("run stopped at tick {tick} with {unprocessed} unprocessed messages")]
    Timeout {
        tick: u64,
        unprocessed: usize,
        partial: Box<RunMetrics>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
