use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of curve points: removal fractions 0%, 1%, ..., 99%.
pub const CURVE_POINTS: usize = 100;

/// How the retained errors are summarised at each point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    /// Mean of the retained errors.
    Mean,
    /// Square root of the mean of the retained errors (pass squared errors).
    Rms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsificationCurve {
    /// Percent removed, 0..=99.
    pub removed_percent: Vec<usize>,
    /// Retained error when removing the most uncertain pixels first,
    /// normalized by the value at 0%.
    pub uncertainty: Vec<f64>,
    /// Retained error when removing the largest errors first, normalized the
    /// same way.
    pub oracle: Vec<f64>,
}

/// Pixel indices sorted by descending key, ties by ascending index.
pub fn removal_order(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    idx
}

/// Retained aggregate error after removing the first `floor(t n / 100)`
/// pixels of `order`, for t = 0..100, unnormalized.
pub fn retained_curve(errors: &[f64], order: &[usize], agg: Aggregate) -> Vec<f64> {
    let n = errors.len();
    // suffix sums over the removal order: tail[i] = sum of errors[order[i..]]
    let mut tail = vec![0.0; n + 1];
    for i in (0..n).rev() {
        tail[i] = tail[i + 1] + errors[order[i]];
    }
    let all = errors.iter().sum::<f64>() / n as f64;
    (0..CURVE_POINTS)
        .map(|t| {
            let removed = t * n / 100;
            let mean = if removed == 0 {
                all
            } else {
                tail[removed] / (n - removed) as f64
            };
            match agg {
                Aggregate::Mean => mean,
                Aggregate::Rms => mean.sqrt(),
            }
        })
        .collect()
}

/// Trapezoidal mean of `|a - b|` over equally spaced points.
pub fn area_between(a: &[f64], b: &[f64]) -> f64 {
    let gap: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
    let m = gap.len();
    if m < 2 {
        return gap.first().copied().unwrap_or(0.0);
    }
    let inner: f64 = gap[1..m - 1].iter().sum();
    (inner + 0.5 * (gap[0] + gap[m - 1])) / (m - 1) as f64
}

/// Sparsification curves and AUSE with [`Aggregate::Mean`].
pub fn sparsification(errors: &[f64], uncertainties: &[f64]) -> Result<(SparsificationCurve, f64)> {
    sparsification_with(errors, uncertainties, Aggregate::Mean)
}

pub fn sparsification_with(
    errors: &[f64],
    uncertainties: &[f64],
    agg: Aggregate,
) -> Result<(SparsificationCurve, f64)> {
    if errors.len() != uncertainties.len() {
        return Err(Error::shape(
            "sparsification",
            format!(
                "{} errors vs {} uncertainties",
                errors.len(),
                uncertainties.len()
            ),
        ));
    }
    if errors.is_empty() {
        return Err(Error::invalid("sparsification: no pixels"));
    }
    if errors.iter().chain(uncertainties).any(|v| !v.is_finite()) || errors.iter().any(|e| *e < 0.0)
    {
        return Err(Error::invalid(
            "sparsification: errors must be finite and >= 0, uncertainties finite",
        ));
    }
    let removed_percent = (0..CURVE_POINTS).collect();
    let unc = retained_curve(errors, &removal_order(uncertainties), agg);
    let ora = retained_curve(errors, &removal_order(errors), agg);
    let base = unc[0];
    if base == 0.0 {
        let zeros = vec![0.0; CURVE_POINTS];
        let curve = SparsificationCurve {
            removed_percent,
            uncertainty: zeros.clone(),
            oracle: zeros,
        };
        return Ok((curve, 0.0));
    }
    let uncertainty: Vec<f64> = unc.iter().map(|v| v / base).collect();
    let oracle: Vec<f64> = ora.iter().map(|v| v / base).collect();
    let ause = area_between(&uncertainty, &oracle);
    Ok((
        SparsificationCurve {
            removed_percent,
            uncertainty,
            oracle,
        },
        ause,
    ))
}
