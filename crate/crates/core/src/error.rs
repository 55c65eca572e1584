use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("access [{offset}, {offset}+{len}) is out of range for `{file}` (length {file_len})")]
    OutOfRange {
        file: String,
        offset: u64,
        len: u64,
        file_len: u64,
    },

    #[error("device capacity exceeded: need {needed} bytes, capacity is {capacity}")]
    CapacityExceeded { needed: u64, capacity: u64 },

    #[error("invalid device spec: {0}")]
    InvalidSpec(String),

    #[error("invalid record layout: {0}")]
    Layout(String),

    #[error("file `{0}` is read-only")]
    ReadOnly(String),

    #[error("no such file on device: `{0}`")]
    NotFound(String),

    #[error("corrupt run file: {0}")]
    CorruptRun(String),

    #[error("profile error: {0}")]
    Profile(String),

    #[error("sort plan error: {0}")]
    Plan(String),

    #[error("merge has no live runs")]
    Exhausted,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("worker thread panicked")]
    WorkerPanic,
}
