use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::render::PixelPrediction;

use super::depth::{depth_errors, disparity, DepthErrors};
use super::image::{psnr, ssim};
use super::nll_metric;
use super::sparsify::{sparsification_with, Aggregate, SparsificationCurve};

/// Ground truth and predictions for one held-out view.
#[derive(Debug, Clone, Copy)]
pub struct EvalView<'a> {
    pub name: &'a str,
    pub gt_color: &'a Raster,
    pub gt_depth: &'a Raster,
    pub gt_opacity: &'a Raster,
    pub predictions: &'a [PixelPrediction],
    pub near: f64,
}

/// PSNR is infinite for identical images; JSON stores that as `null`.
mod psnr_json {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub name: String,
    #[serde(with = "psnr_json")]
    pub psnr: f64,
    /// `None` when the view is smaller than the SSIM window.
    pub ssim: Option<f64>,
    pub nll: f64,
    /// `None` when no pixel passes the opacity mask.
    pub depth: Option<DepthErrors>,
    pub mean_color_var: f64,
    pub mean_depth_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Mean of per-view PSNR; `null` in JSON when every view is exact.
    #[serde(with = "psnr_json")]
    pub psnr: f64,
    pub ssim: Option<f64>,
    /// Disparity errors over masked pixels of all views.
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    pub delta3: Option<f64>,
    pub nll: f64,
    /// Color AUSE: per-pixel squared error ranked by color variance.
    pub ause_color: f64,
    /// Disparity AUSE, RMSE and MAE variants, ranked by depth variance.
    pub ause_rmse: Option<f64>,
    pub ause_mae: Option<f64>,
    pub mean_color_var: f64,
    pub mean_depth_var: f64,
    pub bandwidth: f64,
    pub samples: usize,
    pub pixels: usize,
    pub masked_pixels: usize,
    pub notes: Vec<String>,
    pub views: Vec<ViewMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    pub color: SparsificationCurve,
    pub depth_rmse: Option<SparsificationCurve>,
    pub depth_mae: Option<SparsificationCurve>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub curves: CurveSet,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Full metric suite over `views`. NLL uses `bandwidth`; depth metrics use
/// pixels whose ground-truth opacity is at least 0.5.
pub fn evaluate_views(views: &[EvalView], bandwidth: f64) -> Result<Evaluation> {
    if views.is_empty() {
        return Err(Error::invalid("evaluation needs at least one test view"));
    }
    let mut per_view = Vec::with_capacity(views.len());
    let (mut color_err, mut color_unc) = (Vec::new(), Vec::new());
    let (mut pd, mut gd, mut mask, mut depth_unc) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut gts, mut samples) = (Vec::new(), Vec::new());
    let mut samples_per_pixel = 0;
    for v in views {
        let n = v.gt_color.pixels();
        if v.predictions.len() != n || v.gt_color.channels != 3 {
            return Err(Error::shape(
                "evaluate",
                format!(
                    "view {}: {} predictions for {n} pixels",
                    v.name,
                    v.predictions.len()
                ),
            ));
        }
        if v.gt_depth.pixels() != n || v.gt_opacity.pixels() != n {
            return Err(Error::shape(
                "evaluate",
                format!("view {}: depth/opacity size", v.name),
            ));
        }
        samples_per_pixel = v.predictions[0].color_samples.len();
        let mut pred = Raster::new(v.gt_color.width, v.gt_color.height, 3);
        for (i, p) in v.predictions.iter().enumerate() {
            for c in 0..3 {
                pred.pixel_mut(i)[c] = p.color_mean[c].clamp(0.0, 1.0);
            }
        }
        let view_gt: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                let px = v.gt_color.pixel(i);
                [px[0], px[1], px[2]]
            })
            .collect();
        let view_samples: Vec<Vec<[f64; 3]>> = v
            .predictions
            .iter()
            .map(|p| p.color_samples.clone())
            .collect();
        let nll = nll_metric(&view_gt, &view_samples, bandwidth)?;

        let (mut vpd, mut vgd, mut vmask) = (Vec::new(), Vec::new(), Vec::new());
        for (i, p) in v.predictions.iter().enumerate() {
            let e = (0..3)
                .map(|c| (p.color_mean[c] - view_gt[i][c]).powi(2))
                .sum::<f64>()
                / 3.0;
            color_err.push(e);
            color_unc.push(p.color_var_mean());
            let m = v.gt_opacity.data[i] >= 0.5;
            vpd.push(disparity(p.depth_mean, v.near));
            vgd.push(disparity(v.gt_depth.data[i], v.near));
            vmask.push(m);
            if m {
                depth_unc.push(p.depth_var);
            }
        }
        let depth = if vmask.iter().any(|m| *m) {
            Some(depth_errors(&vpd, &vgd, &vmask)?)
        } else {
            None
        };
        per_view.push(ViewMetrics {
            name: v.name.to_string(),
            psnr: psnr(&pred, v.gt_color)?,
            ssim: ssim(&pred, v.gt_color).ok(),
            nll,
            depth,
            mean_color_var: mean(
                &v.predictions
                    .iter()
                    .map(PixelPrediction::color_var_mean)
                    .collect::<Vec<_>>(),
            ),
            mean_depth_var: mean(
                &v.predictions
                    .iter()
                    .map(|p| p.depth_var)
                    .collect::<Vec<_>>(),
            ),
        });
        pd.extend(vpd);
        gd.extend(vgd);
        mask.extend(vmask);
        gts.extend(view_gt);
        samples.extend(view_samples);
    }

    let (color_curve, ause_color) = sparsification_with(&color_err, &color_unc, Aggregate::Rms)?;
    let masked = mask.iter().filter(|m| **m).count();
    let (depth, rmse_curve, mae_curve) = if masked > 0 {
        let de = depth_errors(&pd, &gd, &mask)?;
        let (sq, ab): (Vec<f64>, Vec<f64>) = pd
            .iter()
            .zip(&gd)
            .zip(&mask)
            .filter(|(_, m)| **m)
            .map(|((p, g), _)| ((p - g).powi(2), (p - g).abs()))
            .unzip();
        let r = sparsification_with(&sq, &depth_unc, Aggregate::Rms)?;
        let a = sparsification_with(&ab, &depth_unc, Aggregate::Mean)?;
        (Some(de), Some(r), Some(a))
    } else {
        (None, None, None)
    };

    let psnrs: Vec<f64> = per_view.iter().map(|v| v.psnr).collect();
    let ssims: Option<Vec<f64>> = per_view.iter().map(|v| v.ssim).collect();
    let report = MetricReport {
        psnr: mean(&psnrs),
        ssim: ssims.map(|s| mean(&s)),
        rmse: depth.map(|d| d.rmse),
        mae: depth.map(|d| d.mae),
        delta1: depth.map(|d| d.delta[0]),
        delta2: depth.map(|d| d.delta[1]),
        delta3: depth.map(|d| d.delta[2]),
        nll: nll_metric(&gts, &samples, bandwidth)?,
        ause_color,
        ause_rmse: rmse_curve.as_ref().map(|c| c.1),
        ause_mae: mae_curve.as_ref().map(|c| c.1),
        mean_color_var: mean(&color_unc),
        mean_depth_var: mean(
            &per_view
                .iter()
                .map(|v| v.mean_depth_var)
                .collect::<Vec<_>>(),
        ),
        bandwidth,
        samples: samples_per_pixel,
        pixels: color_err.len(),
        masked_pixels: masked,
        notes: Vec::new(),
        views: per_view,
    };
    Ok(Evaluation {
        report,
        curves: CurveSet {
            color: color_curve,
            depth_rmse: rmse_curve.map(|c| c.0),
            depth_mae: mae_curve.map(|c| c.0),
        },
    })
}
