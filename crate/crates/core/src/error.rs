use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("malformed WAV file: {0}")]
    MalformedWav(String),
    #[error("unsupported WAV encoding: format tag {format}, {bits} bits per sample")]
    UnsupportedEncoding { format: u16, bits: u16 },
    #[error("multichannel WAV not supported ({0} channels)")]
    Multichannel(u16),
    #[error("waveform too short: {len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("malformed feature file: {0}")]
    MalformedFeatures(String),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("index {index} out of range 0..{len}")]
    OutOfRange { index: usize, len: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("zero-norm vector in cosine similarity")]
    ZeroNorm,
    #[error("contrastive loss needs at least one anchor")]
    EmptyAnchors,
    #[error("empty table")]
    EmptyTable,

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
