//! Minimal reverse-mode automatic differentiation over dense tensors.

mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod param;

pub use gradcheck::{finite_diff_grad, max_rel_error};
pub use graph::{sigmoid, BatchStats, Gradients, Graph, Mode, RunningStats, Var, PROB_EPS};
pub use kernels::ConvGeom;
pub use param::Parameter;
