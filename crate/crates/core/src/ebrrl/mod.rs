//! Event-based reward training: reward aggregation, experience replay and
//! the train-hold round that couples the modality predictor to the detector.

pub mod policy;
pub mod replay;
pub mod reward;
pub mod train_hold;

pub use policy::policy_update;
pub use replay::{ReplayBuffer, Transition, BUFFER_CAPACITY, DIGEST_LEN};
pub use reward::{
    aggregate_reward, aggregate_reward_with, discounted_return, ActionRecord, RewardWeights,
};
pub use train_hold::{
    EpisodeReport, Event, Orchestrator, TrainHoldConfig, TrainSet, EPISODE_HEADER,
};
