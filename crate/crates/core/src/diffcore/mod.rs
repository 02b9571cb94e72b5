//! Dense `f64` tensors with a reverse-mode tape.

mod check;
mod checkpoint;
mod tape;
mod tensor;

pub use check::finite_difference_check;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_HEADER};
pub use tape::{Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
