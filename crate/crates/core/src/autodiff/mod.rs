//! Reverse-mode automatic differentiation over [`Tensor`](crate::Tensor)s.

mod graph;
mod kernels;

pub use graph::{softmax_rows, FrameLayout, Gradients, Graph, Var};
