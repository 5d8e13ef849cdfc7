use candle_core::{Tensor, D};
use rand::Rng;

use super::params::Scope;
use crate::error::{Error, Result};

/// A differentiable map from one tensor to another.
pub trait Module {
    fn forward(&self, xs: &Tensor) -> Result<Tensor>;
}

impl<F: Fn(&Tensor) -> Result<Tensor>> Module for F {
    fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        self(xs)
    }
}

/// 2-D convolution over `N × C × H × W` inputs.
#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        scope: &mut Scope<'_, R>,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = scope.weight("weight", &[out_ch, in_ch, kernel, kernel])?;
        let bias = if bias {
            Some(scope.bias("bias", &[out_ch])?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }
}

impl Module for Conv2d {
    fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let c = xs.dim(1)?;
        if c != self.in_channels() {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        let ys = super::conv::conv2d(xs, &self.weight, self.stride, self.padding)?;
        add_channel_bias(ys, self.bias.as_ref())
    }
}

/// Transposed 2-D convolution (kernel layout `in × out × k × k`).
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl ConvTranspose2d {
    pub fn new<R: Rng + ?Sized>(
        scope: &mut Scope<'_, R>,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = scope.weight("weight", &[in_ch, out_ch, kernel, kernel])?;
        let bias = if bias {
            Some(scope.bias("bias", &[out_ch])?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[1]
    }
}

impl Module for ConvTranspose2d {
    fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let c = xs.dim(1)?;
        if c != self.in_channels() {
            return Err(Error::shape(format!(
                "transposed conv expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        let ys = super::conv::conv_transpose2d(xs, &self.weight, self.stride, self.padding)?;
        add_channel_bias(ys, self.bias.as_ref())
    }
}

fn add_channel_bias(ys: Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    match bias {
        Some(b) => Ok(ys.broadcast_add(&b.reshape((1, (), 1, 1))?)?),
        None => Ok(ys),
    }
}

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-sample, per-channel normalization over the spatial dimensions, without affine terms.
///
/// A map with a single spatial element normalizes to zero, so such maps pass through unchanged.
pub fn instance_norm(xs: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = xs.dims4()?;
    if h * w == 1 {
        return Ok(xs.clone());
    }
    let flat = xs.reshape((n, c, h * w))?;
    let mean = flat.mean_keepdim(D::Minus1)?;
    let centered = flat.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + INSTANCE_NORM_EPS)?.sqrt()?)?;
    Ok(normed.reshape((n, c, h, w))?)
}

pub fn leaky_relu(xs: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(xs.maximum(&(xs * slope)?)?)
}

/// Nearest-neighbour resize of the two spatial dimensions, built from index
/// selection so gradients accumulate correctly when the input has several consumers.
pub fn resize_nearest(xs: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (_, _, h, w) = xs.dims4()?;
    if (h, w) == (height, width) {
        return Ok(xs.clone());
    }
    let index = |dst: usize, src: usize| -> Result<Tensor> {
        let idx: Vec<u32> = (0..dst).map(|i| ((i * src) / dst) as u32).collect();
        Ok(Tensor::from_vec(idx, dst, xs.device())?)
    };
    let ys = xs.index_select(&index(height, h)?, 2)?;
    Ok(ys.index_select(&index(width, w)?, 3)?)
}

/// Numerically stable `log σ(x)` = `min(x, 0) − ln(1 + e^{−|x|})`.
pub fn log_sigmoid(xs: &Tensor) -> Result<Tensor> {
    let neg_abs = xs.abs()?.neg()?;
    let softplus = (neg_abs.exp()? + 1.0)?.log()?;
    Ok((xs.minimum(0.0)? - softplus)?)
}
