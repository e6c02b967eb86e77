//! Differentiable numeric primitives: tensors, the reverse-mode tape, the
//! Adam optimizer and a finite-difference gradient checker. Everything runs
//! in 64-bit arithmetic, single-threaded and deterministic.

pub mod adam;
pub mod gradcheck;
pub mod graph;
pub mod rng;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState, Optimizer};
pub use gradcheck::{finite_diff_check, DEFAULT_EPSILON};
pub use graph::{sigmoid_values, softmax_values, Graph, NodeId};
pub use rng::Rng;
pub use tensor::{ParamId, ParamSet, Parameter, Tensor};
