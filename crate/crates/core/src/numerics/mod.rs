//! Dense matrices, a reverse-mode tape, and a finite-difference oracle.

mod gradcheck;
mod graph;
mod matrix;

pub use gradcheck::{finite_difference_gradient, grad_close};
pub use graph::{softmax_in_place, Gradients, Graph, NodeId, Op, DIV_EPS};
pub use matrix::Matrix;
