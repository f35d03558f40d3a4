//! Transformer-based text coherence models built on a small autodiff engine.

pub mod arch;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{Error, Result};
