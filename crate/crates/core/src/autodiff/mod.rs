//! Reverse-mode automatic differentiation and the neural building blocks
//! trained with it.

pub mod checkpoint;
pub mod expm;
pub mod gradcheck;
pub mod nn;
pub mod optim;
pub mod params;
pub mod tape;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use expm::{expm, matrix_exp};
pub use nn::{Activation, BoundGru, BoundMlp, GruCell, Mlp, MlpConfig};
pub use optim::{adamw_step, clip_grad_norm, cosine_lr, grad_norm, OptimizerConfig};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use tape::{ContrastiveIndex, Gradients, Tape, Var};
