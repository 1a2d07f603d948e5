//! Dense tensors, a reverse-mode tape, parameters and optimization.

mod gradcheck;
mod graph;
mod optim;
mod params;
mod real;
#[allow(clippy::module_inception)]
mod tensor;

pub use gradcheck::{finite_difference_check, relative_error, GradCheck};
pub use graph::{bce_with_logits, BatchStats, Graph, Var};
pub(crate) use graph::sigmoid;
pub use optim::{Adam, LrSchedule};
pub use params::{ParamId, ParamStore};
pub use real::Real;
pub use tensor::Tensor;
