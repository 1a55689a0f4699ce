//! Analytic scenes, their ground-truth renderer and on-disk datasets.

mod analytic;
mod dataset;

pub use analytic::{
    builtin, occlusion, two_sphere, Aabb, AnalyticScene, OraclePixel, Primitive, Shape,
};
pub use dataset::{generate_dataset, render_view, CameraRig, RayDataset, View, MANIFEST_VERSION};
