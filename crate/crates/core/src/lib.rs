//! Learning-based identification of affine linear parameter-varying
//! state-space models with a jointly learned scheduling map.

pub mod benchmark;
pub mod diffnet;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod loss;
pub mod lpv;
pub mod metrics;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
