//! Dense `f64` tensors and a reverse-mode tape.

mod graph;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use tensor::{sign, Tensor};
