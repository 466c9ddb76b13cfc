//! Reverse-mode differentiation, the Adam optimizer, and gradient checking.

mod adam;
mod gradcheck;
mod graph;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{check_gradients, check_gradients_tampered, GradCheckReport};
pub use graph::{sigmoid, Graph, NodeId, Tensor};
