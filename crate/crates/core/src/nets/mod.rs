//! Minimal CPU networks: layers, a sequential container, Adam, losses and
//! the two models built from them.

pub mod adam;
pub mod detector;
pub mod layers;
pub mod loss;
pub mod predictor;
pub mod sequential;

pub use adam::AdamState;
pub use detector::{Detector, DetectorConfig, Target};
pub use layers::{Conv2d, Dense, PoolMode};
pub use loss::CenterBox;
pub use predictor::{Predictor, PredictorConfig};
pub use sequential::{Layer, Mode, Sequential};
