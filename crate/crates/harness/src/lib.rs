//! Training, evaluation, ablation and plotting for contrastive PPO and its
//! reward-based baseline.

pub mod ablate;
pub mod agent;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod fidelity;
pub mod metrics;
pub mod plot;
pub mod stats;
pub mod train;

pub use error::{HarnessError, Result};
