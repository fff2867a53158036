use thiserror::Error;

/// Errors produced anywhere in the training stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in block {block} (element {index})")]
    NonFinite { block: usize, index: usize },

    #[error("value {value} at index {index} is outside the 4-bit range [-8, 7]")]
    PackRange { index: usize, value: i32 },

    #[error("malformed quantized tensor: {0}")]
    Structure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("svd did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    SvdConvergence { sweeps: usize, off_norm: f64 },

    #[error("cannot compute {0} of an all-zero matrix")]
    ZeroMatrix(&'static str),

    #[error("invalid state: {0}")]
    State(String),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
