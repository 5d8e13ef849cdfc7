//! Pixel-level similarity between a generated image and its reference.
//!
//! Inputs are `[-1, 1]` images; every metric works on values mapped to
//! `[0, 1]`, so the peak intensity is 1.

use crate::dataio::ImageTensor;
use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check_shapes(x: &ImageTensor, y: &ImageTensor) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::shape(format!(
            "metric inputs differ in shape: {:?} vs {:?}",
            x.dims(),
            y.dims()
        )));
    }
    Ok(())
}

/// Normalized 1-D Gaussian taps; the window shrinks to the largest odd size
/// that fits in `limit` pixels.
pub fn gaussian_window(limit: usize) -> Vec<f64> {
    let mut size = SSIM_WINDOW.min(limit);
    if size % 2 == 0 {
        size -= 1;
    }
    let half = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Valid-mode separable filtering of one `h × w` plane.
fn filter(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..wo {
            rows[y * wo + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * wo + x]).sum();
        }
    }
    (out, ho, wo)
}

/// Structural similarity with an 11×11 Gaussian window (σ = 1.5), averaged
/// over all valid window positions and channels.
pub fn ssim(x: &ImageTensor, y: &ImageTensor) -> Result<f64> {
    check_shapes(x, y)?;
    let (c, h, w) = x.dims();
    let taps = gaussian_window(h.min(w));
    let (xs, ys) = (x.to_unit_range(), y.to_unit_range());
    let plane = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let a = &xs[ch * plane..(ch + 1) * plane];
        let b = &ys[ch * plane..(ch + 1) * plane];
        let product = |f: &dyn Fn(f64, f64) -> f64| a.iter().zip(b).map(|(&p, &q)| f(p, q)).collect::<Vec<_>>();
        let (mu_x, ho, wo) = filter(a, h, w, &taps);
        let (mu_y, ..) = filter(b, h, w, &taps);
        let (xx, ..) = filter(&product(&|p, _| p * p), h, w, &taps);
        let (yy, ..) = filter(&product(&|_, q| q * q), h, w, &taps);
        let (xy, ..) = filter(&product(&|p, q| p * q), h, w, &taps);
        for i in 0..ho * wo {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        count += ho * wo;
    }
    Ok(total / count as f64)
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical images.
pub fn psnr(x: &ImageTensor, y: &ImageTensor) -> Result<f64> {
    check_shapes(x, y)?;
    let (xs, ys) = (x.to_unit_range(), y.to_unit_range());
    let mse = xs.iter().zip(&ys).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / xs.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Sharpness difference in dB: compares the summed absolute forward
/// differences of both images over pixels with a right and lower neighbour.
/// `+inf` when the gradient magnitudes agree everywhere.
pub fn sharpness_difference(x: &ImageTensor, y: &ImageTensor) -> Result<f64> {
    check_shapes(x, y)?;
    let (c, h, w) = x.dims();
    if h < 2 || w < 2 {
        return Err(Error::shape(format!("sharpness difference needs at least 2x2 pixels, got {h}x{w}")));
    }
    let (xs, ys) = (x.to_unit_range(), y.to_unit_range());
    let grad = |v: &[f64], base: usize, i: usize, j: usize| {
        let p = base + i * w + j;
        (v[p + w] - v[p]).abs() + (v[p + 1] - v[p]).abs()
    };
    let mut sum = 0.0;
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..h - 1 {
            for j in 0..w - 1 {
                sum += (grad(&xs, base, i, j) - grad(&ys, base, i, j)).abs();
            }
        }
    }
    let mean = sum / (c * (h - 1) * (w - 1)) as f64;
    Ok(if mean == 0.0 { f64::INFINITY } else { -10.0 * mean.log10() })
}
