//! Planar float images in channel-major layout.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};

/// A `channels × height × width` image with values normalized to `[-1, 1]`.
///
/// Pixel `(c, y, x)` lives at `data[(c * height + y) * width + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// Maps an 8-bit intensity to `[-1, 1]`.
#[inline]
pub fn normalize(v: u8) -> f32 {
    f32::from(v) / 127.5 - 1.0
}

/// Maps a `[-1, 1]` value back to the 8-bit intensity scale (not rounded).
#[inline]
pub fn denormalize(v: f32) -> f32 {
    (v + 1.0) * 127.5
}

/// Quantizes a `[-1, 1]` value to 8 bits, clamping out-of-range values.
#[inline]
pub fn quantize(v: f32) -> u8 {
    denormalize(v).round().clamp(0.0, 255.0) as u8
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "image dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "buffer of {} values does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    /// Builds an image by evaluating `f(c, y, x)` for every pixel.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let idx = (c * self.height + y) * self.width + x;
        self.data[idx] = v;
    }

    /// One channel as a row-major `height × width` slice.
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Copies the column range `[x0, x0 + w)` into a new image.
    pub fn crop_columns(&self, x0: usize, w: usize) -> Result<Self> {
        if w == 0 || x0 + w > self.width {
            return Err(Error::shape(format!(
                "column range {x0}..{} outside width {}",
                x0 + w,
                self.width
            )));
        }
        Self::from_fn(self.channels, self.height, w, |c, y, x| self.get(c, y, x0 + x))
    }

    /// Maps every value from `[-1, 1]` to `[0, 1]`.
    pub fn to_unit_range(&self) -> Vec<f64> {
        self.data.iter().map(|&v| (f64::from(v) + 1.0) / 2.0).collect()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f32> {
        if self.dims() != other.dims() {
            return Err(Error::shape(format!(
                "cannot compare {:?} with {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0f32, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Loads an image file as 3-channel RGB normalized to `[-1, 1]`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; 3 * h * w];
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[(c * h + y as usize) * w + x as usize] = normalize(px.0[c]);
            }
        }
        Self {
            channels: 3,
            height: h,
            width: w,
            data,
        }
    }

    /// Quantizes a 3-channel image to 8-bit RGB.
    pub fn to_rgb8(&self) -> Result<RgbImage> {
        if self.channels != 3 {
            return Err(Error::shape(format!(
                "RGB export needs 3 channels, got {}",
                self.channels
            )));
        }
        Ok(ImageBuffer::from_fn(
            self.width as u32,
            self.height as u32,
            |x, y| {
                let (x, y) = (x as usize, y as usize);
                Rgb([
                    quantize(self.get(0, y, x)),
                    quantize(self.get(1, y, x)),
                    quantize(self.get(2, y, x)),
                ])
            },
        ))
    }

    /// Writes the image as 8-bit RGB; the format follows the file extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_rgb8()?.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// A `1 × C × H × W` tensor of the given dtype.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let t = Tensor::from_slice(
            &self.data,
            (1, self.channels, self.height, self.width),
            device,
        )?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Stacks equally shaped images into an `N × C × H × W` tensor.
    pub fn stack(images: &[&ImageTensor], dtype: DType, device: &Device) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::shape("cannot stack an empty image list"))?;
        let dims = first.dims();
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for img in images {
            if img.dims() != dims {
                return Err(Error::shape(format!(
                    "cannot stack {:?} with {:?}",
                    img.dims(),
                    dims
                )));
            }
            data.extend_from_slice(&img.data);
        }
        let t = Tensor::from_vec(data, (images.len(), dims.0, dims.1, dims.2), device)?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Splits an `N × C × H × W` tensor into `N` images.
    pub fn unstack(t: &Tensor) -> Result<Vec<ImageTensor>> {
        let (n, c, h, w) = t.dims4()?;
        let flat: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        let per = c * h * w;
        (0..n)
            .map(|i| ImageTensor::new(c, h, w, flat[i * per..(i + 1) * per].to_vec()))
            .collect()
    }
}
