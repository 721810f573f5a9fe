//! Tape-based reverse-mode differentiation over small dense arrays.
//!
//! A [`Graph`] is built fresh for every loss evaluation: each builder call
//! computes its forward value immediately, and [`Graph::backward`] returns the
//! adjoint of every node with respect to a scalar loss. [`AdamState`] consumes
//! those gradients, and [`grad_check`] compares them against central
//! differences.

mod adam;
mod check;
mod graph;

pub use adam::{adam_step, AdamConfig, AdamError, AdamState, ParamGrad};
pub use check::{grad_check, relative_error, GradCheck, RELATIVE_FLOOR};
pub use graph::{GraphError, Gradients, Graph, NodeId, Shape, Tensor};
