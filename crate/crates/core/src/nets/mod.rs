//! Policy networks and the contrastive encoders.

mod encoder;
mod init;
mod mlp;
mod policy;

pub use encoder::{EncoderParams, EncoderVars};
pub use init::orthogonal;
pub use mlp::{Activation, Linear, Mlp, MlpConfig, MlpVars, Norm};
pub use policy::{Dist, PolicyParams, PolicyVars, LOG_STD_MAX, LOG_STD_MIN, POLICY_HEAD_GAIN};

/// Desk-scale hidden widths.
pub const DESK_HIDDEN: [usize; 2] = [64, 64];
/// Hidden widths of the full-size configuration.
pub const PAPER_HIDDEN: [usize; 4] = [512, 512, 512, 512];
/// Representation dimension of the contrastive encoders.
pub const DEFAULT_REPR_DIM: usize = 64;
