//! Spiral pooling, stem-block visual modalities and event-based reward
//! training, wired into a small grid detector with evaluation and robustness
//! tooling.

pub mod config;
pub mod corruptions;
pub mod ebrrl;
pub mod error;
pub mod io;
pub mod metrics;
pub mod nets;
pub mod par;
pub mod pipeline;
pub mod spiral;
pub mod stem;
pub mod synth;
pub mod tensor;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use tensor::{channel_concat, elementwise_mul, FeatureMap, Image};
