use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(f64),

    #[error("grid code {0:#x} out of range (4-bit codes only)")]
    InvalidGridCode(u8),

    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),

    #[error("block max {0:e} needs a scale below the smallest f64")]
    ScaleUnderflow(f64),

    #[error("scale mantissa bits must be in 0..=8, got {0}")]
    InvalidMantissaBits(u8),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate policy: logit-difference variance is zero")]
    DegeneratePolicy,

    #[error("effective rank of a zero matrix is undefined")]
    ZeroMatrix,

    #[error("empty tensor set")]
    EmptySet,

    #[error("malformed container: {0}")]
    Container(String),

    #[error("tensor `{name}` contains a non-finite value at index {index}")]
    NonFiniteTensor { name: String, index: usize },

    #[error("invalid synthetic spec: {0}")]
    Synth(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("cannot read {}: {source}", path.display())]
    ReadFile {
        path: std::path::PathBuf,
        source: std::io::Error,
    },

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
