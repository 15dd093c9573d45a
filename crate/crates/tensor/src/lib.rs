//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Values live in [`Tensor`]; a [`Graph`] records every operation applied to
//! [`Var`] handles and replays them backwards to obtain gradients. Network
//! parameters are owned by a [`ParamStore`] and bound into a graph per step.

mod error;
mod gemm;
pub mod gradcheck;
mod graph;
pub mod init;
pub mod layers;
pub mod optim;
mod tape;
mod tensor;

pub use error::TensorError;
pub use graph::{Graph, Group, Mode, ParamEntry, ParamId, ParamKind, ParamStore};
pub use tape::{Conv1dGeom, Conv2dGeom, Gradients, Tape, Var};
pub use tensor::Tensor;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
