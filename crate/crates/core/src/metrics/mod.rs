//! Image quality, depth and uncertainty metrics.

mod depth;
mod export;
mod image;
mod report;
mod sparsify;

pub use depth::{depth_errors, disparity, DepthErrors, DELTA_TAU};
pub use export::{viridis, write_curve_csv, write_heatmap, HeatmapRange};
pub use image::{psnr, ssim};
pub use report::{evaluate_views, CurveSet, EvalView, Evaluation, MetricReport, ViewMetrics};
pub use sparsify::{
    area_between, removal_order, retained_curve, sparsification, sparsification_with, Aggregate,
    SparsificationCurve, CURVE_POINTS,
};

use crate::error::{Error, Result};
use crate::objective::kde_loglik;

/// Mean negative KDE log-likelihood of `gt` under per-pixel samples, with
/// the training kernel.
pub fn nll_metric(gt: &[[f64; 3]], samples: &[Vec<[f64; 3]>], bandwidth: f64) -> Result<f64> {
    if gt.len() != samples.len() {
        return Err(Error::shape(
            "nll_metric",
            format!("{} targets vs {} sample sets", gt.len(), samples.len()),
        ));
    }
    if gt.is_empty() {
        return Err(Error::invalid("nll_metric: no pixels"));
    }
    let mut lls = Vec::with_capacity(gt.len());
    for (c, s) in gt.iter().zip(samples) {
        lls.push(kde_loglik(*c, s, bandwidth)?);
    }
    let total: f64 = lls.iter().sum();
    Ok(-(total * (1.0 / gt.len() as f64)))
}
