//! Minimal dense tensors with reverse-mode automatic differentiation.
//!
//! Values are `f64`, row-major. A [`Graph`] records operations as they run and
//! [`Graph::backward`] replays them in reverse. Parameters live in a
//! [`ParamStore`] outside any graph and are bound into a fresh graph for each
//! forward pass.

pub mod check;
pub mod checkpoint;
mod error;
mod graph;
mod optim;
mod param;
mod tensor;

pub use error::{AutogradError, Result};
pub use graph::{Gradients, Graph, Var};
pub use optim::{sgd_step, SgdConfig};
pub use param::{BoundParams, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
