//! Predictive-coding reward shaping.
//!
//! Random exploration data trains a contrastive predictive encoder; its
//! embeddings are clustered and turned into shaped rewards for a PPO learner
//! on GridWorld mazes, Pendulum and a kinematic Reacher.

pub mod clustering;
pub mod config;
pub mod cpc;
pub mod envs;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod rl;
pub mod shaping;

pub use error::{Error, Result};
