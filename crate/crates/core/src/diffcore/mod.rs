//! Minimal differentiable-computation kernel: dense tensors, the primitives
//! the pose generator needs, and reverse-mode gradients for each of them.

pub mod checkpoint;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_params, read_params, save_params, write_params, PGCK_MAGIC};
pub use tape::{AttentionWeights, Mode, Tape, Var, LAYER_NORM_EPS};
pub use tensor::{Gradients, ParamId, ParamStore, Parameter, Real, Tensor};
