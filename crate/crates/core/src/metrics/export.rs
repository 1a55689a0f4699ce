use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{write_png, Raster};

use super::sparsify::SparsificationCurve;

const VIRIDIS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

/// Viridis-style ramp, `v` in [0, 1] mapped to unit RGB.
pub fn viridis(v: f64) -> [f64; 3] {
    let v = if v.is_finite() {
        v.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let x = v * (VIRIDIS.len() - 1) as f64;
    let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - i as f64;
    std::array::from_fn(|c| (VIRIDIS[i][c] * (1.0 - f) + VIRIDIS[i + 1][c] * f) / 255.0)
}

/// Value range of a heat map, stored next to the PNG.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRange {
    pub min: f64,
    pub max: f64,
}

/// Write a one-channel raster as a color-mapped PNG plus a `.json` range
/// sidecar. Returns the sidecar path.
pub fn write_heatmap(path: &Path, values: &Raster) -> Result<PathBuf> {
    if values.channels != 1 {
        return Err(Error::invalid("heat maps take one-channel rasters"));
    }
    let finite = values.data.iter().copied().filter(|v| v.is_finite());
    let min = finite.clone().fold(f64::INFINITY, f64::min);
    let max = finite.fold(f64::NEG_INFINITY, f64::max);
    let (min, max) = if min.is_finite() {
        (min, max)
    } else {
        (0.0, 0.0)
    };
    let span = max - min;
    let mut rgb = Raster::new(values.width, values.height, 3);
    for (i, v) in values.data.iter().enumerate() {
        let t = if span > 0.0 { (v - min) / span } else { 0.0 };
        rgb.pixel_mut(i).copy_from_slice(&viridis(t));
    }
    write_png(path, &rgb)?;
    let sidecar = path.with_extension("json");
    let text =
        serde_json::to_string_pretty(&HeatmapRange { min, max }).map_err(|source| Error::Json {
            path: sidecar.clone(),
            source,
        })?;
    fs::write(&sidecar, text + "\n").map_err(|e| Error::io(&sidecar, e))?;
    Ok(sidecar)
}

/// CSV with columns `t, uncertainty_curve, oracle_curve`.
pub fn write_curve_csv(path: &Path, curve: &SparsificationCurve) -> Result<()> {
    let io = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["t", "uncertainty_curve", "oracle_curve"])
        .map_err(io)?;
    for ((t, u), o) in curve
        .removed_percent
        .iter()
        .zip(&curve.uncertainty)
        .zip(&curve.oracle)
    {
        w.write_record([t.to_string(), u.to_string(), o.to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
