//! Contrastive PPO: reward-free on-policy RL with a contrastively trained
//! goal-conditioned critic.
//!
//! Modules, bottom-up: [`diffcore`] (tensors and reverse-mode tape),
//! [`nets`] (policy and encoder MLPs), [`contrastive`] (hindsight
//! relabeling, InfoNCE, contrastive advantages), [`ppo`] (clipped
//! surrogate, GAE baseline, Adam, update epochs), [`envs`] (vectorized
//! gridworld, point reacher, connector) and [`oracle`] (exact discounted
//! occupancy for tabular tasks).

pub mod contrastive;
pub mod diffcore;
pub mod envs;
pub mod error;
pub mod nets;
pub mod oracle;
pub mod ppo;
pub mod rng;
pub mod spaces;

pub use error::{Error, Result};
