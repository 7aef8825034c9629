//! Adaptive-potential-function reward shaping over a dueling deep Q-network,
//! with a dual-U-Net frame encoder, built-in pixel games, and the statistical
//! comparison harness.

pub mod apf;
pub mod ddqn;
pub mod config;
pub mod envs;
pub mod error;
pub mod stats;
pub mod trainer;
pub mod trainlog;
pub mod wnet;

pub use error::{CoreError, Result};
