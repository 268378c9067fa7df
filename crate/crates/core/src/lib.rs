//! Bit-exact MXFP4 block quantization with a scale / deadzone / grid error
//! decomposition, the MBS and OF corrections, AQN noise, and the statistics
//! used to analyse them.

pub mod analysis;
pub mod corrections;
pub mod decomposition;
pub mod error;
pub mod mxformat;
pub mod quantizer;
pub mod report;
pub mod tensor;
pub mod tensorstore;

pub use error::{Error, Result};
pub use tensor::Tensor;
