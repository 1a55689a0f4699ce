use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ratio threshold for the delta accuracies.
pub const DELTA_TAU: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthErrors {
    pub rmse: f64,
    pub mae: f64,
    /// Fractions with `max(y/y*, y*/y) < 1.25^k` for k = 1, 2, 3.
    pub delta: [f64; 3],
    pub count: usize,
}

/// Disparity of a depth, clamped so empty predictions stay finite.
pub fn disparity(depth: f64, near: f64) -> f64 {
    1.0 / depth.max(near)
}

/// RMSE, MAE and delta accuracies over the masked entries.
pub fn depth_errors(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<DepthErrors> {
    if pred.len() != gt.len() || pred.len() != mask.len() {
        return Err(Error::shape(
            "depth_errors",
            format!(
                "{} predictions, {} targets, {} mask entries",
                pred.len(),
                gt.len(),
                mask.len()
            ),
        ));
    }
    let (mut se, mut ae, mut hits, mut n) = (0.0, 0.0, [0usize; 3], 0usize);
    for ((p, g), m) in pred.iter().zip(gt).zip(mask) {
        if !m {
            continue;
        }
        if !(*p > 0.0 && *g > 0.0) {
            return Err(Error::invalid(
                "depth_errors: masked values must be positive",
            ));
        }
        let d = p - g;
        se += d * d;
        ae += d.abs();
        let ratio = (p / g).max(g / p);
        for (k, h) in hits.iter_mut().enumerate() {
            if ratio < DELTA_TAU.powi(k as i32 + 1) {
                *h += 1;
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("depth_errors: empty mask"));
    }
    let nf = n as f64;
    Ok(DepthErrors {
        rmse: (se / nf).sqrt(),
        mae: ae / nf,
        delta: hits.map(|h| h as f64 / nf),
        count: n,
    })
}
