//! Expressive voice conversion by disentangled representations: encoders,
//! decoder, vector-quantized content codes, mutual-information penalties,
//! the training and conversion pipeline, objective metrics and a synthetic
//! corpus with known factors.

pub mod config;
pub mod eval;
mod error;
pub mod mi;
pub mod networks;
pub mod pipeline;
pub mod quantizer;
pub mod synth;

pub use config::{Config, MiWeights, ModelConfig, Preset, TrainConfig};
pub use error::{CoreError, ErrorKind};

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
