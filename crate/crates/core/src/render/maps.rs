use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::raster::{write_pfm, write_png, Raster};

use super::batch::PixelPrediction;

/// Image-shaped render outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMaps {
    pub color: Raster,
    pub depth: Raster,
    /// Channel-averaged color variance.
    pub color_var: Raster,
    pub depth_var: Raster,
    pub opacity: Raster,
}

impl PredictionMaps {
    pub fn from_predictions(width: usize, height: usize, preds: &[PixelPrediction]) -> Self {
        let mut maps = Self {
            color: Raster::new(width, height, 3),
            depth: Raster::new(width, height, 1),
            color_var: Raster::new(width, height, 1),
            depth_var: Raster::new(width, height, 1),
            opacity: Raster::new(width, height, 1),
        };
        for (i, p) in preds.iter().enumerate() {
            maps.color.pixel_mut(i).copy_from_slice(&p.color_mean);
            maps.depth.data[i] = p.depth_mean;
            maps.color_var.data[i] = p.color_var_mean();
            maps.depth_var.data[i] = p.depth_var;
            maps.opacity.data[i] = p.opacity_mean();
        }
        maps
    }

    /// Write `{prefix}color.png`, `{prefix}depth.pfm`, `{prefix}color_var.pfm`
    /// and `{prefix}depth_var.pfm` into `dir`.
    pub fn write(&self, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
        let color = dir.join(format!("{prefix}color.png"));
        let depth = dir.join(format!("{prefix}depth.pfm"));
        let color_var = dir.join(format!("{prefix}color_var.pfm"));
        let depth_var = dir.join(format!("{prefix}depth_var.pfm"));
        write_png(&color, &self.color)?;
        write_pfm(&depth, &self.depth)?;
        write_pfm(&color_var, &self.color_var)?;
        write_pfm(&depth_var, &self.depth_var)?;
        Ok(vec![color, depth, color_var, depth_var])
    }
}
