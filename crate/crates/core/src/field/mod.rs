//! The conditional-flow radiance field and its building blocks.

mod arch;
mod encoding;
mod model;
mod prior;
mod sylvester;

pub use arch::{Architecture, ModelMode, ALPHA_DIM, LATENT_DIM, RGB_DIM};
pub use encoding::{encoded_dim, positional_encode};
pub use model::{
    latent_interpolate, tile_eps, Conditioned, Decoded, FieldModel, FlowVars, LogQ, ModelVars,
    PointFlows, PointSample, PointVars,
};
pub use prior::{gaussian_logpdf, inverse_softplus, LatentPrior};
pub use sylvester::{
    stack_forward, stack_inverse, sylvester_inverse, sylvester_step, SylvesterParams,
};
