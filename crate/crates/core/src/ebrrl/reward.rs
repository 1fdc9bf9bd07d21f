//! Weighted reward over one parent and two child scores, and discounted
//! returns.

use crate::error::{Error, Result};

/// Weights of the parent (detector) and the two child (modality) scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub parent: f64,
    pub thermal: f64,
    pub dark: f64,
}

impl RewardWeights {
    pub const DEFAULT: Self = Self {
        parent: 0.4,
        thermal: 0.3,
        dark: 0.3,
    };

    /// Rejects negative weights and weights that do not sum to 1.
    pub fn new(parent: f64, thermal: f64, dark: f64) -> Result<Self> {
        let w = [parent, thermal, dark];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::domain(format!(
                "reward weights must be non-negative, got {w:?}"
            )));
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!(
                "reward weights must sum to 1, got {w:?}"
            )));
        }
        Ok(Self {
            parent,
            thermal,
            dark,
        })
    }
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Scores observed after one round of actions, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionRecord {
    pub parent_score: f64,
    pub child_thermal_score: f64,
    pub child_dark_score: f64,
}

pub fn aggregate_reward(a: &ActionRecord) -> Result<f64> {
    aggregate_reward_with(a, &RewardWeights::DEFAULT)
}

pub fn aggregate_reward_with(a: &ActionRecord, w: &RewardWeights) -> Result<f64> {
    for (name, v) in [
        ("parent", a.parent_score),
        ("thermal", a.child_thermal_score),
        ("dark", a.child_dark_score),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::domain(format!("{name} score {v} outside [0, 1]")));
        }
    }
    Ok(w.parent * a.parent_score + w.thermal * a.child_thermal_score + w.dark * a.child_dark_score)
}

/// `sum_k gamma^k r_k`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::domain(format!("discount {gamma} outside [0, 1)")));
    }
    Ok(rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc))
}
