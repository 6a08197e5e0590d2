//! Minimal differentiable array engine.
//!
//! Forward kernels live in [`ops`]; [`Graph`] records them and runs the
//! reverse sweep. Every kernel has an adjoint checked by [`check_gradients`].

pub mod gradcheck;
mod graph;
pub mod ops;
mod optim;
mod param;
mod tensor;

pub use gradcheck::{check_gradients, check_param_gradients, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use param::{Init, ParamId, ParamStore, Parameter};
pub use tensor::float::FloatLike;
pub use tensor::{Element, Precision, Tensor};
