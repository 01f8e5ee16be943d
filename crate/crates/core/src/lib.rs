//! Bidirectional selective state space countermeasure for raw-waveform
//! spoofing detection, built on a small `f64` reverse-mode tensor engine.

pub mod bimamba;
pub mod error;
pub mod frontend;
pub mod layers;
pub mod mamba;
pub mod metrics;
pub mod pipeline;
pub mod ssm;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
