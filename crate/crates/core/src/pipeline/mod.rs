//! End-to-end runs built from the library pieces: training, evaluation,
//! robustness sweeps, ablations and the spiral benchmark.

pub mod bench;
pub mod model;
pub mod robustness;
pub mod train;

pub use model::{collect, evaluate, DetectionSource, GroundTruthOracle, Model};
pub use robustness::{robustness, RobustnessRow};
pub use train::{ablation, load_data, train, TrainOutcome};
