//! Cameras, ray quadrature and volume rendering.

mod batch;
mod camera;
mod maps;
mod quadrature;

pub use batch::{
    render_graph, render_pixel, render_rays, Latents, PixelPrediction, RayBatch, RenderVars,
};
pub use camera::{Camera, Ray, Vec3};
pub use maps::PredictionMaps;
pub use quadrature::{
    composite, expected_depth, midpoint_samples, stratified_samples, Composite, DepthEstimate,
    QuadratureNodes,
};
