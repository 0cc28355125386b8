//! Dense matrices, reverse-mode autodiff and the finite-difference oracle.

pub mod gradcheck;
pub mod graph;
mod matrix;

pub use gradcheck::{finite_diff_grad, max_relative_error, relative_error};
pub use graph::{softmax_rows, Graph, NodeId};
pub use matrix::Matrix;
