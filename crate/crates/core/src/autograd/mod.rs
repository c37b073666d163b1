//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is built symbolically: free inputs are referenced by name and
//! resolved against [`Bindings`] at evaluation time, so one set of model
//! parameters can drive many graphs without copying.

mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheckReport, GRAD_FLOOR};
pub use graph::{AttnGeom, AttnMask, Bindings, Graph, NodeId, Op};
pub use tensor::Tensor;
