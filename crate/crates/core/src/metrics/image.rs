use crate::error::{Error, Result};
use crate::raster::Raster;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check_pair(op: &'static str, pred: &Raster, gt: &Raster) -> Result<()> {
    if !pred.same_dims(gt) {
        return Err(Error::shape(
            op,
            format!(
                "{}x{}x{} vs {}x{}x{}",
                pred.width, pred.height, pred.channels, gt.width, gt.height, gt.channels
            ),
        ));
    }
    if pred.data.is_empty() {
        return Err(Error::invalid(format!("{op}: empty image")));
    }
    if pred
        .data
        .iter()
        .chain(&gt.data)
        .any(|v| !(0.0..=1.0).contains(v))
    {
        return Err(Error::invalid(format!("{op}: values must lie in [0, 1]")));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB for unit-range images; identical images
/// give `f64::INFINITY`.
pub fn psnr(pred: &Raster, gt: &Raster) -> Result<f64> {
    check_pair("psnr", pred, gt)?;
    let n = pred.data.len() as f64;
    let mse = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w: Vec<f64> = (0..SSIM_WINDOW * SSIM_WINDOW)
        .map(|i| {
            let (y, x) = (
                (i / SSIM_WINDOW) as f64 - half,
                (i % SSIM_WINDOW) as f64 - half,
            );
            (-(x * x + y * y) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Structural similarity on the channel-mean grayscale images, averaged
/// over every fully contained 11x11 Gaussian window.
pub fn ssim(pred: &Raster, gt: &Raster) -> Result<f64> {
    check_pair("ssim", pred, gt)?;
    if pred.width < SSIM_WINDOW || pred.height < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            pred.width, pred.height
        )));
    }
    let (a, b) = (pred.channel_mean(), gt.channel_mean());
    let w = gaussian_window();
    let width = pred.width;
    let (nx, ny) = (width - SSIM_WINDOW + 1, pred.height - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for oy in 0..ny {
        for ox in 0..nx {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for wy in 0..SSIM_WINDOW {
                for wx in 0..SSIM_WINDOW {
                    let k = w[wy * SSIM_WINDOW + wx];
                    let i = (oy + wy) * width + ox + wx;
                    let (x, y) = (a.data[i], b.data[i]);
                    ma += k * x;
                    mb += k * y;
                    saa += k * x * x;
                    sbb += k * y * y;
                    sab += k * x * y;
                }
            }
            let va = (saa - ma * ma).max(0.0);
            let vb = (sbb - mb * mb).max(0.0);
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
                / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        }
    }
    Ok(total / (nx * ny) as f64)
}
