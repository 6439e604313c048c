//! Minimal deterministic tensor library with reverse-mode differentiation.
//!
//! Values are stored row-major in plain vectors. A [`Graph`] records every
//! operation of one forward pass; [`Graph::backward`] replays the tape in
//! reverse topological order and accumulates gradients for every node
//! flagged `requires_grad`. All kernels are straight loops: identical seeds
//! and inputs give bit-identical results on one platform.
//!
//! Storage precision is `f32` in the model and training paths; every kernel
//! is generic over [`Real`] so gradient checks can also run in `f64`.

mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, VarId};
pub use params::ParamStore;
pub use tensor::{Real, Tensor};
