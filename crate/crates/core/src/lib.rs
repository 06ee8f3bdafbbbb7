//! Reward-noise channels, unbiased corrections, exact policy dynamics and a
//! tabular GRPO / Dr.GRPO trainer for verifiable-reward RL.

pub mod correction;
pub mod dynamics;
pub mod error;
pub mod format;
pub mod reward_channel;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use reward_channel::{Environment, NoiseSpec, PromptSpec, RewardDraw};
