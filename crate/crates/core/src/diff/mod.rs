//! Reverse-mode differentiable numerics sized for the fixed radiance-field
//! architecture: tensors, a recording graph, Adam, finite-difference checks
//! and the checkpoint container.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod graph;
pub(crate) mod linalg;
mod params;
mod tensor;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use gradcheck::{
    analytic_gradients, compare, grad_check, numeric_gradients, relative_error, GradCheckOptions,
    GradCheckReport, ParamCheck,
};
pub(crate) use graph::{log_sigmoid, logsumexp, sigmoid, softplus};
pub use graph::{Graph, Var};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
