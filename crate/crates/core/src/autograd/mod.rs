//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation executed on its [`Var`] handles in
//! execution order. [`Graph::backward`] then walks the tape in exact reverse
//! order, summing the gradient contributions of every consumer before a
//! node's own backward function runs.

mod gradcheck;
mod graph;
mod ops;

pub use gradcheck::grad_check;
pub use graph::{Function, Graph, Var};
pub use ops::{BinaryOp, ReduceOp};
