//! Convolutions as patch extraction plus one matrix product.
//!
//! `im2col` and `col2im` are adjoint linear maps, so each is the other's
//! backward pass. A convolution is `W · im2col(x)` and a transposed
//! convolution is `col2im(Wᵀ · x)`; the heavy lifting is the matrix product,
//! and both directions are exactly deterministic.

use std::ops::AddAssign;

use candle_core::{CpuStorage, CustomOp1, Layout, Shape, Tensor, WithDType};

use crate::error::{Error, Result};

/// Patch geometry of a convolution over an `n × c × h × w` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(n: usize, c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::shape(format!(
                "kernel {k} with stride {stride} and padding {pad} does not fit a {h}x{w} image"
            )));
        }
        Ok(Self {
            n,
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn image_len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Columns are laid out `(c·k·k) × (n·ho·wo)`.
    fn cols_shape(&self) -> (usize, usize) {
        (self.c * self.k * self.k, self.n * self.ho * self.wo)
    }

    /// Calls `f(image_start, column_start, count)` for every in-bounds run of
    /// one kernel tap along a row, in a fixed order. Within a run the image
    /// index advances by `stride` and the column index by one.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (k, s, p) = (self.k, self.stride, self.pad);
        let l = self.ho * self.wo;
        let row_len = self.n * l;
        for c in 0..self.c {
            for ki in 0..k {
                for kj in 0..k {
                    // ox range with 0 <= ox·s + kj − p < w
                    let lo = if kj >= p { 0 } else { (p - kj).div_ceil(s) };
                    let hi = if self.w + p > kj { ((self.w + p - kj - 1) / s + 1).min(self.wo) } else { 0 };
                    if lo >= hi {
                        continue;
                    }
                    let row = ((c * k + ki) * k + kj) * row_len;
                    for n in 0..self.n {
                        let img = (n * self.c + c) * self.h;
                        for oy in 0..self.ho {
                            let iy = oy * s + ki;
                            if iy < p || iy - p >= self.h {
                                continue;
                            }
                            let img_start = (img + iy - p) * self.w + lo * s + kj - p;
                            f(img_start, row + n * l + oy * self.wo + lo, hi - lo);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Copy + Default>(&self, x: &[T]) -> Vec<T> {
        let (r, c) = self.cols_shape();
        let mut cols = vec![T::default(); r * c];
        let s = self.stride;
        self.for_each_run(|i, j, len| {
            let dst = &mut cols[j..j + len];
            if s == 1 {
                dst.copy_from_slice(&x[i..i + len]);
            } else {
                for (d, v) in dst.iter_mut().zip(x[i..].iter().step_by(s)) {
                    *d = *v;
                }
            }
        });
        cols
    }

    fn col2im<T: Copy + Default + AddAssign>(&self, cols: &[T]) -> Vec<T> {
        let mut img = vec![T::default(); self.image_len()];
        let s = self.stride;
        self.for_each_run(|i, j, len| {
            for (d, v) in img[i..].iter_mut().step_by(s).zip(&cols[j..j + len]) {
                *d += *v;
            }
        });
        img
    }
}

fn contiguous_slice<'a, T: WithDType>(data: &'a [T], layout: &Layout) -> candle_core::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle_core::bail!("patch ops expect contiguous inputs"),
    }
}

struct Im2Col(Geometry);
struct Col2Im(Geometry);

impl CustomOp1 for Im2Col {
    fn name(&self) -> &'static str {
        "im2col"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        if layout.shape().elem_count() != g.image_len() {
            candle_core::bail!("im2col: input has {} elements, expected {}", layout.shape().elem_count(), g.image_len());
        }
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(g.im2col(contiguous_slice(v, layout)?)),
            CpuStorage::F64(v) => CpuStorage::F64(g.im2col(contiguous_slice(v, layout)?)),
            _ => candle_core::bail!("im2col supports f32 and f64 only"),
        };
        Ok((out, g.cols_shape().into()))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&Col2Im(self.0))?))
    }
}

impl CustomOp1 for Col2Im {
    fn name(&self) -> &'static str {
        "col2im"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = &self.0;
        let (r, c) = g.cols_shape();
        if layout.shape().elem_count() != r * c {
            candle_core::bail!("col2im: input has {} elements, expected {}", layout.shape().elem_count(), r * c);
        }
        let out = match storage {
            CpuStorage::F32(v) => CpuStorage::F32(g.col2im(contiguous_slice(v, layout)?)),
            CpuStorage::F64(v) => CpuStorage::F64(g.col2im(contiguous_slice(v, layout)?)),
            _ => candle_core::bail!("col2im supports f32 and f64 only"),
        };
        Ok((out, (g.n, g.c, g.h, g.w).into()))
    }

    fn bwd(&self, _arg: &Tensor, _res: &Tensor, grad: &Tensor) -> candle_core::Result<Option<Tensor>> {
        Ok(Some(grad.contiguous()?.apply_op1_no_bwd(&Im2Col(self.0))?))
    }
}

/// `xs: n × c × h × w`, `weight: out × c × k × k` → `n × out × ho × wo`.
pub(crate) fn conv2d(xs: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (n, c, h, w) = xs.dims4()?;
    let (out, wc, k, k2) = weight.dims4()?;
    if wc != c || k != k2 {
        return Err(Error::shape(format!("conv weight {:?} does not match input {:?}", weight.dims(), xs.dims())));
    }
    let g = Geometry::new(n, c, h, w, k, stride, pad)?;
    let cols = xs.contiguous()?.apply_op1(Im2Col(g))?;
    let ys = weight.reshape((out, c * k * k))?.matmul(&cols)?;
    Ok(ys.reshape((out, n, g.ho, g.wo))?.transpose(0, 1)?.contiguous()?)
}

/// `xs: n × c × h × w`, `weight: c × out × k × k` → `n × out × (h−1)s−2p+k × …`.
pub(crate) fn conv_transpose2d(xs: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (n, c, h, w) = xs.dims4()?;
    let (wc, out, k, k2) = weight.dims4()?;
    if wc != c || k != k2 {
        return Err(Error::shape(format!(
            "transposed conv weight {:?} does not match input {:?}",
            weight.dims(),
            xs.dims()
        )));
    }
    let (ho, wo) = ((h - 1) * stride + k, (w - 1) * stride + k);
    if ho < 2 * pad + 1 || wo < 2 * pad + 1 {
        return Err(Error::shape(format!("padding {pad} exceeds the {ho}x{wo} transposed output")));
    }
    let g = Geometry::new(n, out, ho - 2 * pad, wo - 2 * pad, k, stride, pad)?;
    debug_assert_eq!((g.ho, g.wo), (h, w));
    let x = xs.transpose(0, 1)?.contiguous()?.reshape((c, n * h * w))?;
    let cols = weight.reshape((c, out * k * k))?.t()?.matmul(&x)?;
    Ok(cols.contiguous()?.apply_op1(Col2Im(g))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device, Var};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
        assert_eq!(a.dims(), b.dims());
        (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn conv_matches_reference() {
        for (k, s, p, h, w) in [(4, 2, 1, 8, 12), (3, 1, 1, 5, 7), (1, 1, 0, 3, 4), (4, 2, 1, 2, 2)] {
            let x = rand_t(&[2, 3, h, w], 1);
            let wt = rand_t(&[5, 3, k, k], 2);
            let want = x.conv2d(&wt, p, s, 1, 1).unwrap();
            assert!(max_diff(&conv2d(&x, &wt, s, p).unwrap(), &want) < 1e-12, "k{k} s{s} p{p}");
        }
    }

    #[test]
    fn transposed_conv_matches_reference() {
        for (k, s, p, h, w) in [(4, 2, 1, 4, 6), (4, 2, 1, 1, 1), (3, 1, 1, 5, 3)] {
            let x = rand_t(&[2, 3, h, w], 3);
            let wt = rand_t(&[3, 5, k, k], 4);
            let want = x.conv_transpose2d(&wt, p, 0, s, 1).unwrap();
            assert!(max_diff(&conv_transpose2d(&x, &wt, s, p).unwrap(), &want) < 1e-12, "k{k} s{s} p{p}");
        }
    }

    #[test]
    fn gradients_match_reference() {
        let x = Var::from_tensor(&rand_t(&[2, 3, 6, 8], 5)).unwrap();
        let wt = Var::from_tensor(&rand_t(&[4, 3, 4, 4], 6)).unwrap();
        let probe = rand_t(&[2, 4, 3, 4], 7);
        let ours = (conv2d(&x, &wt, 2, 1).unwrap() * &probe).unwrap().sum_all().unwrap().backward().unwrap();
        let theirs = (x.conv2d(&wt, 1, 2, 1, 1).unwrap() * &probe).unwrap().sum_all().unwrap().backward().unwrap();
        for v in [x.as_tensor(), wt.as_tensor()] {
            assert!(max_diff(ours.get(v).unwrap(), theirs.get(v).unwrap()) < 1e-12);
        }

        let wt = Var::from_tensor(&rand_t(&[3, 4, 4, 4], 8)).unwrap();
        let probe = rand_t(&[2, 4, 12, 16], 9);
        let ours = (conv_transpose2d(&x, &wt, 2, 1).unwrap() * &probe).unwrap().sum_all().unwrap().backward().unwrap();
        let theirs = (x.conv_transpose2d(&wt, 1, 0, 2, 1).unwrap() * &probe)
            .unwrap()
            .sum_all()
            .unwrap()
            .backward()
            .unwrap();
        for v in [x.as_tensor(), wt.as_tensor()] {
            assert!(max_diff(ours.get(v).unwrap(), theirs.get(v).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn patch_maps_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = Geometry::new(2, 3, 5, 6, 3, 2, 1).unwrap();
        let x = rand_t(&[2, 3, 5, 6], 10);
        let (r, c) = g.cols_shape();
        let y = rand_t(&[r, c], 11);
        let lhs = (x.apply_op1(Im2Col(g)).unwrap() * &y).unwrap().sum_all().unwrap();
        let rhs = (y.apply_op1(Col2Im(g)).unwrap() * &x).unwrap().sum_all().unwrap();
        let (a, b) = (lhs.to_scalar::<f64>().unwrap(), rhs.to_scalar::<f64>().unwrap());
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }

    #[test]
    fn f32_supported_and_bad_shapes_rejected() {
        let x = rand_t(&[1, 2, 4, 4], 12).to_dtype(DType::F32).unwrap();
        let wt = rand_t(&[3, 2, 3, 3], 13).to_dtype(DType::F32).unwrap();
        assert_eq!(conv2d(&x, &wt, 1, 1).unwrap().dims(), [1, 3, 4, 4]);
        assert!(conv2d(&x, &rand_t(&[3, 5, 3, 3], 1).to_dtype(DType::F32).unwrap(), 1, 1).is_err());
        assert!(conv2d(&x, &rand_t(&[3, 2, 7, 7], 1).to_dtype(DType::F32).unwrap(), 1, 0).is_err());
    }
}
