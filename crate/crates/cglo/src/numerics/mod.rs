//! Minimal differentiable-tensor core: dense tensors, the layer ops the
//! generator needs, L1 loss, reverse-mode gradients, and a finite-difference
//! verifier.

pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod tensor;

pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId};
pub use tensor::Tensor;
