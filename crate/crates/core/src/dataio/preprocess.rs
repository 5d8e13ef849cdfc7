//! Aerial-to-generator-input transforms.
//!
//! The generator consumes an input with the same spatial size as the target
//! panorama (`height × 4·height`), so the square aerial image has to be
//! widened first. Three strategies are supported:
//!
//! * [`InputFormat::DuplicateRotate`]: four tiles, each rotated a further 90°
//!   counter-clockwise from the tile to its left.
//! * [`InputFormat::Duplicate`]: four identical tiles.
//! * [`InputFormat::Polar`]: unwrap the aerial image around its center, angle
//!   along the width and radius along the height.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::image::ImageTensor;
use crate::error::{Error, Result};

/// How an aerial image is turned into a panorama-shaped generator input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    Polar,
    Duplicate,
    #[default]
    DuplicateRotate,
}

impl InputFormat {
    pub const ALL: [InputFormat; 3] = [
        InputFormat::Polar,
        InputFormat::Duplicate,
        InputFormat::DuplicateRotate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InputFormat::Polar => "polar",
            InputFormat::Duplicate => "duplicate",
            InputFormat::DuplicateRotate => "duplicate_rotate",
        }
    }

    /// Transforms a square aerial image into a `C × height × 4·height` input.
    pub fn apply(self, aerial: &ImageTensor, height: usize) -> Result<ImageTensor> {
        match self {
            InputFormat::Polar => polar(aerial, height, 4 * height),
            InputFormat::Duplicate => duplicate(aerial, height),
            InputFormat::DuplicateRotate => duplicate_rotate(aerial, height),
        }
    }
}

impl fmt::Display for InputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InputFormat::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown input format {s:?}; expected polar, duplicate or duplicate_rotate"
                ))
            })
    }
}

fn require_square(img: &ImageTensor) -> Result<()> {
    if !img.is_square() {
        return Err(Error::shape(format!(
            "aerial input must be square, got {}x{}",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Bilinear sample at continuous pixel-center coordinates, clamped to the border.
#[inline]
fn sample_bilinear(img: &ImageTensor, c: usize, y: f64, x: f64) -> f64 {
    let h = img.height();
    let w = img.width();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let top = f64::from(img.get(c, y0, x0)) * (1.0 - fx) + f64::from(img.get(c, y0, x1)) * fx;
    let bottom = f64::from(img.get(c, y1, x0)) * (1.0 - fx) + f64::from(img.get(c, y1, x1)) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear resize with half-pixel centers. Returns a copy when the size already matches.
pub fn resize_bilinear(img: &ImageTensor, height: usize, width: usize) -> Result<ImageTensor> {
    if height == 0 || width == 0 {
        return Err(Error::shape("resize target must be positive"));
    }
    if img.height() == height && img.width() == width {
        return Ok(img.clone());
    }
    let sy = img.height() as f64 / height as f64;
    let sx = img.width() as f64 / width as f64;
    ImageTensor::from_fn(img.channels(), height, width, |c, y, x| {
        let src_y = (y as f64 + 0.5) * sy - 0.5;
        let src_x = (x as f64 + 0.5) * sx - 0.5;
        sample_bilinear(img, c, src_y, src_x) as f32
    })
}

/// Nearest-neighbour resize with half-pixel centers.
pub fn resize_nearest(img: &ImageTensor, height: usize, width: usize) -> Result<ImageTensor> {
    if height == 0 || width == 0 {
        return Err(Error::shape("resize target must be positive"));
    }
    if img.height() == height && img.width() == width {
        return Ok(img.clone());
    }
    let src = |dst: usize, dst_len: usize, src_len: usize| {
        (((dst as f64 + 0.5) * src_len as f64 / dst_len as f64) as usize).min(src_len - 1)
    };
    ImageTensor::from_fn(img.channels(), height, width, |c, y, x| {
        img.get(c, src(y, height, img.height()), src(x, width, img.width()))
    })
}

/// Rotates a square image by 90° counter-clockwise.
pub fn rot90_ccw(img: &ImageTensor) -> Result<ImageTensor> {
    require_square(img)?;
    let n = img.width();
    ImageTensor::from_fn(img.channels(), n, n, |c, y, x| img.get(c, x, n - 1 - y))
}

fn tile(quarters: &[ImageTensor; 4]) -> Result<ImageTensor> {
    let q = &quarters[0];
    let (c, h, w) = q.dims();
    ImageTensor::from_fn(c, h, 4 * w, |ch, y, x| quarters[x / w].get(ch, y, x % w))
}

/// Resizes to `height × height` and tiles four copies, each rotated a further
/// 90° counter-clockwise than its left neighbour.
pub fn duplicate_rotate(aerial: &ImageTensor, height: usize) -> Result<ImageTensor> {
    require_square(aerial)?;
    let q0 = resize_bilinear(aerial, height, height)?;
    let q1 = rot90_ccw(&q0)?;
    let q2 = rot90_ccw(&q1)?;
    let q3 = rot90_ccw(&q2)?;
    tile(&[q0, q1, q2, q3])
}

/// Resizes to `height × height` and tiles four identical copies along the width.
pub fn duplicate(aerial: &ImageTensor, height: usize) -> Result<ImageTensor> {
    require_square(aerial)?;
    let q = resize_bilinear(aerial, height, height)?;
    tile(&[q.clone(), q.clone(), q.clone(), q])
}

/// Polar unwrap of a square aerial image.
///
/// Output column `u` is the angle `θ = 2π·u / width`, measured clockwise from
/// the top of the aerial image; output row `v` is the radius
/// `ρ = v / height · ρ_max` with `ρ_max` half the aerial side. The center
/// sits at pixel coordinate `(side − 1) / 2`; samples are bilinear with
/// coordinates clamped to the border.
pub fn polar(aerial: &ImageTensor, height: usize, width: usize) -> Result<ImageTensor> {
    require_square(aerial)?;
    if height == 0 || width == 0 {
        return Err(Error::shape("polar output size must be positive"));
    }
    let side = aerial.width() as f64;
    let center = (side - 1.0) / 2.0;
    let rho_max = side / 2.0;
    // Angle terms are shared by every row and channel.
    let dirs: Vec<(f64, f64)> = (0..width)
        .map(|u| {
            let theta = 2.0 * PI * u as f64 / width as f64;
            (theta.sin(), theta.cos())
        })
        .collect();
    ImageTensor::from_fn(aerial.channels(), height, width, |c, v, u| {
        let rho = v as f64 / height as f64 * rho_max;
        let (sin, cos) = dirs[u];
        sample_bilinear(aerial, c, center - rho * cos, center + rho * sin) as f32
    })
}
