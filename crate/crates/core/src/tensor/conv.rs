#![allow(clippy::needless_range_loop)]

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{checked, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Geometry of a 2-D convolution. Weights are laid out as
/// `[out_channels, in_channels / groups, kh, kw]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Square kernel, stride 1, "same" padding, one group, with bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (1, 1),
            dilation: (1, 1),
            padding: (kernel / 2, kernel / 2),
            groups: 1,
            has_bias: true,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    /// Sets the dilation and re-derives "same" padding `d * (k - 1) / 2`.
    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = (d, d);
        self.padding = (d * (self.kernel.0 - 1) / 2, d * (self.kernel.1 - 1) / 2);
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = (p, p);
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.in_channels,
            self.out_channels,
            self.groups,
            self.kernel.0,
            self.kernel.1,
            self.stride.0,
            self.stride.1,
            self.dilation.0,
            self.dilation.1,
        ];
        if positive.contains(&0) {
            return Err(Error::Config(format!("conv spec has a zero extent: {self:?}")));
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return Err(Error::Config(format!(
                "channels {}->{} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel.0,
            self.kernel.1,
        )
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.out_channels, 1, 1)
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().numel() + if self.has_bias { self.out_channels } else { 0 }
    }

    /// Multiply-accumulates per output pixel.
    pub fn macs_per_pixel(&self) -> usize {
        self.weight_shape().numel()
    }

    pub fn fan_in(&self) -> usize {
        (self.in_channels / self.groups) * self.kernel.0 * self.kernel.1
    }

    /// Output extents for an `h x w` input, or an error when either is < 1.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let extent = |len: usize, k: usize, s: usize, d: usize, p: usize| -> Option<usize> {
            let span = d * (k - 1) + 1;
            let padded = len + 2 * p;
            (padded >= span).then(|| (padded - span) / s + 1)
        };
        let oh = extent(h, self.kernel.0, self.stride.0, self.dilation.0, self.padding.0);
        let ow = extent(w, self.kernel.1, self.stride.1, self.dilation.1, self.padding.1);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok((oh, ow)),
            _ => Err(Error::shape(
                "conv2d",
                format!("input {h}x{w} too small for {:?}", self),
            )),
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        if input.c != self.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels, spec expects {}", input.c, self.in_channels),
            ));
        }
        let (oh, ow) = self.output_hw(input.h, input.w)?;
        Ok(Shape::new(input.n, self.out_channels, oh, ow))
    }
}

/// Range of output columns whose source column `o * stride + offset` lies
/// in `[0, len)`.
#[inline]
fn valid_range(offset: isize, stride: usize, len: usize, out_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset < 0 {
        ((-offset + s - 1) / s) as usize
    } else {
        0
    };
    let last = len as isize - 1 - offset;
    if last < 0 {
        return (0, 0);
    }
    let hi = ((last / s) as usize + 1).min(out_len);
    (lo.min(hi), hi)
}

/// `dst += a * src`, elementwise.
#[inline]
fn axpy<T: Scalar>(dst: &mut [T], src: &[T], a: T) {
    for (d, &v) in dst.iter_mut().zip(src) {
        *d = *d + a * v;
    }
}

/// Number of interleaved partial sums used by weight-gradient reductions.
const LANES: usize = 8;

/// Adds `a[i] * b[i]` into `acc[i % LANES]`.
#[inline]
fn dot_lanes<T: Scalar>(a: &[T], b: &[T], acc: &mut [T; LANES]) {
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..LANES {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    for (l, (&x, &y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
        acc[l] = acc[l] + x * y;
    }
}

fn check_params<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Shape> {
    let out = spec.output_shape(input.shape())?;
    if weight.shape() != spec.weight_shape() {
        return Err(Error::shape(
            "conv2d",
            format!("weight {} but spec needs {}", weight.shape(), spec.weight_shape()),
        ));
    }
    match (bias, spec.has_bias) {
        (Some(b), true) if b.numel() == spec.out_channels => {}
        (None, false) => {}
        (Some(b), true) => {
            return Err(Error::shape(
                "conv2d",
                format!("bias has {} values for {} outputs", b.numel(), spec.out_channels),
            ))
        }
        (Some(_), false) => return Err(Error::shape("conv2d", "bias given to a bias-free conv")),
        (None, true) => return Err(Error::shape("conv2d", "missing bias")),
    }
    Ok(out)
}

/// Direct 2-D convolution with zero padding.
///
/// Each output element is accumulated as `bias + sum_ic sum_ky sum_kx w * x`
/// in exactly that loop order (input channel outermost, kernel column
/// innermost), independent of thread count. Output planes are computed in
/// parallel.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let out_shape = check_params(input, weight, bias, spec)?;
    let in_shape = input.shape();
    let (oh, ow) = (out_shape.h, out_shape.w);
    let (kh, kw) = spec.kernel;
    let icg = spec.in_channels / spec.groups;
    let ocg = spec.out_channels / spec.groups;
    let x = input.data();
    let wt = weight.data();

    let mut out = vec![T::zero(); out_shape.numel()];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(plane_idx, plane)| {
        let n = plane_idx / spec.out_channels;
        let oc = plane_idx % spec.out_channels;
        let g = oc / ocg;
        let b = bias.map_or(T::zero(), |b| b.data()[oc]);
        plane.fill(b);
        for icl in 0..icg {
            let ic = g * icg + icl;
            let src = &x[(n * in_shape.c + ic) * in_shape.plane()..][..in_shape.plane()];
            for ky in 0..kh {
                let row_off = (ky * spec.dilation.0) as isize - spec.padding.0 as isize;
                let (oy0, oy1) = valid_range(row_off, spec.stride.0, in_shape.h, oh);
                for kx in 0..kw {
                    let wv = wt[((oc * icg + icl) * kh + ky) * kw + kx];
                    let col_off = (kx * spec.dilation.1) as isize - spec.padding.1 as isize;
                    let (ox0, ox1) = valid_range(col_off, spec.stride.1, in_shape.w, ow);
                    if ox0 == ox1 {
                        continue;
                    }
                    for oy in oy0..oy1 {
                        let iy = (oy * spec.stride.0) as isize + row_off;
                        let src_row = &src[iy as usize * in_shape.w..][..in_shape.w];
                        let dst_row = &mut plane[oy * ow..(oy + 1) * ow];
                        if spec.stride.1 == 1 {
                            let ix0 = (ox0 as isize + col_off) as usize;
                            axpy(&mut dst_row[ox0..ox1], &src_row[ix0..ix0 + (ox1 - ox0)], wv);
                            continue;
                        }
                        for ox in ox0..ox1 {
                            let ix = ((ox * spec.stride.1) as isize + col_off) as usize;
                            dst_row[ox] = dst_row[ox] + wv * src_row[ix];
                        }
                    }
                }
            }
        }
    });
    checked("conv2d", Tensor::from_parts(out_shape, out))
}

/// Gradients of a convolution with respect to its operands.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// Backward pass of [`conv2d`]. The input gradient is only computed when
/// `need_input` is set.
///
/// Weight gradients for unit column stride are reduced into 8 interleaved
/// partial sums per kernel tap (lane = position within each contiguous row
/// segment, mod 8) which are then added in lane order. Like the forward
/// pass, the order does not depend on the thread count.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: &ConvSpec,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let out_shape = spec.output_shape(input.shape())?;
    if grad_out.shape() != out_shape {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad {} vs output {}", grad_out.shape(), out_shape),
        ));
    }
    let in_shape = input.shape();
    let (oh, ow) = (out_shape.h, out_shape.w);
    let (kh, kw) = spec.kernel;
    let icg = spec.in_channels / spec.groups;
    let ocg = spec.out_channels / spec.groups;
    let x = input.data();
    let wt = weight.data();
    let gy = grad_out.data();
    let (sh, sw) = spec.stride;

    let grad_input = need_input.then(|| {
        let mut gin = vec![T::zero(); in_shape.numel()];
        gin.par_chunks_mut(in_shape.plane())
            .enumerate()
            .for_each(|(plane_idx, plane)| {
                let n = plane_idx / in_shape.c;
                let ic = plane_idx % in_shape.c;
                let g = ic / icg;
                let icl = ic % icg;
                for oc in g * ocg..(g + 1) * ocg {
                    let gplane = &gy[(n * out_shape.c + oc) * oh * ow..][..oh * ow];
                    for ky in 0..kh {
                        let row_off = (ky * spec.dilation.0) as isize - spec.padding.0 as isize;
                        let (oy0, oy1) = valid_range(row_off, sh, in_shape.h, oh);
                        for kx in 0..kw {
                            let wv = wt[((oc * icg + icl) * kh + ky) * kw + kx];
                            let col_off = (kx * spec.dilation.1) as isize - spec.padding.1 as isize;
                            let (ox0, ox1) = valid_range(col_off, sw, in_shape.w, ow);
                            if ox0 == ox1 {
                                continue;
                            }
                            for oy in oy0..oy1 {
                                let iy = ((oy * sh) as isize + row_off) as usize;
                                let dst = &mut plane[iy * in_shape.w..][..in_shape.w];
                                let g_row = &gplane[oy * ow..][..ow];
                                if sw == 1 {
                                    let ix0 = (ox0 as isize + col_off) as usize;
                                    axpy(&mut dst[ix0..ix0 + (ox1 - ox0)], &g_row[ox0..ox1], wv);
                                    continue;
                                }
                                for ox in ox0..ox1 {
                                    let ix = ((ox * sw) as isize + col_off) as usize;
                                    dst[ix] = dst[ix] + wv * g_row[ox];
                                }
                            }
                        }
                    }
                }
            });
        Tensor::from_parts(in_shape, gin)
    });

    let wshape = spec.weight_shape();
    let per_oc = icg * kh * kw;
    let mut gw = vec![T::zero(); wshape.numel()];
    gw.par_chunks_mut(per_oc).enumerate().for_each(|(oc, chunk)| {
        let g = oc / ocg;
        for icl in 0..icg {
            let ic = g * icg + icl;
            for ky in 0..kh {
                let row_off = (ky * spec.dilation.0) as isize - spec.padding.0 as isize;
                let (oy0, oy1) = valid_range(row_off, sh, in_shape.h, oh);
                for kx in 0..kw {
                    let col_off = (kx * spec.dilation.1) as isize - spec.padding.1 as isize;
                    let (ox0, ox1) = valid_range(col_off, sw, in_shape.w, ow);
                    if ox0 == ox1 {
                        continue;
                    }
                    let mut acc = [T::zero(); LANES];
                    for n in 0..in_shape.n {
                        let src = &x[(n * in_shape.c + ic) * in_shape.plane()..][..in_shape.plane()];
                        let gplane = &gy[(n * out_shape.c + oc) * oh * ow..][..oh * ow];
                        for oy in oy0..oy1 {
                            let iy = ((oy * sh) as isize + row_off) as usize;
                            let src_row = &src[iy * in_shape.w..][..in_shape.w];
                            let g_row = &gplane[oy * ow..][..ow];
                            if sw == 1 {
                                let ix0 = (ox0 as isize + col_off) as usize;
                                dot_lanes(&g_row[ox0..ox1], &src_row[ix0..ix0 + (ox1 - ox0)], &mut acc);
                                continue;
                            }
                            for ox in ox0..ox1 {
                                let ix = ((ox * sw) as isize + col_off) as usize;
                                acc[0] = acc[0] + g_row[ox] * src_row[ix];
                            }
                        }
                    }
                    chunk[(icl * kh + ky) * kw + kx] = acc.iter().fold(T::zero(), |a, &v| a + v);
                }
            }
        }
    });

    let grad_bias = spec.has_bias.then(|| {
        let mut gb = vec![T::zero(); spec.out_channels];
        for n in 0..in_shape.n {
            for (oc, acc) in gb.iter_mut().enumerate() {
                let gplane = &gy[(n * out_shape.c + oc) * oh * ow..][..oh * ow];
                *acc = gplane.iter().fold(*acc, |a, &v| a + v);
            }
        }
        Tensor::from_parts(spec.bias_shape(), gb)
    });

    Ok(ConvGrads {
        input: grad_input,
        weight: Tensor::from_parts(wshape, gw),
        bias: grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_sum_with_same_padding() {
        let x = Tensor::<f32>::full(Shape::new(1, 1, 3, 3), 1.0);
        let w = Tensor::<f32>::full(Shape::new(1, 1, 3, 3), 1.0);
        let spec = ConvSpec::new(1, 1, 3).bias(false);
        let y = conv2d(&x, &w, None, &spec).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 9.0);
        for (h, w) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.at(0, 0, h, w), 4.0);
        }
        assert_eq!(y.at(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn unit_pointwise_kernel_is_identity() {
        let x = Tensor::<f32>::from_fn(Shape::new(2, 1, 4, 5), |n, _, h, w| (n * 20 + h * 5 + w) as f32 * 0.1);
        let w = Tensor::<f32>::full(Shape::new(1, 1, 1, 1), 1.0);
        let y = conv2d(&x, &w, None, &ConvSpec::new(1, 1, 1).bias(false)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn same_padding_follows_dilation() {
        let spec = ConvSpec::new(8, 8, 3).dilation(2);
        assert_eq!(spec.padding, (2, 2));
        assert_eq!(spec.output_hw(9, 7).unwrap(), (9, 7));
        let strided = ConvSpec::new(8, 8, 3).stride(3).padding(1);
        assert_eq!(strided.output_hw(48, 48).unwrap(), (16, 16));
        assert_eq!(strided.output_hw(3, 3).unwrap(), (1, 1));
        assert_eq!(strided.output_hw(360, 640).unwrap(), (120, 214));
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(ConvSpec::new(6, 4, 3).groups(4).validate().is_err());
        let spec = ConvSpec::new(1, 1, 5).padding(0);
        assert!(spec.output_hw(3, 3).is_err());
        let x = Tensor::<f32>::zeros(Shape::new(1, 2, 4, 4));
        let w = Tensor::<f32>::zeros(ConvSpec::new(3, 1, 3).weight_shape());
        let b = Tensor::<f32>::zeros(Shape::new(1, 1, 1, 1));
        assert!(conv2d(&x, &w, Some(&b), &ConvSpec::new(3, 1, 3)).is_err());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let x = Tensor::<f32>::full(Shape::new(1, 1, 2, 2), f32::MAX);
        let w = Tensor::<f32>::full(Shape::new(1, 1, 3, 3), 4.0);
        let err = conv2d(&x, &w, None, &ConvSpec::new(1, 1, 3).bias(false)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "conv2d" }));
    }

    #[test]
    fn depthwise_keeps_channels_apart() {
        let x = Tensor::<f32>::from_fn(Shape::new(1, 2, 3, 3), |_, c, _, _| (c + 1) as f32);
        let w = Tensor::<f32>::full(Shape::new(2, 1, 1, 1), 2.0);
        let y = conv2d(&x, &w, None, &ConvSpec::new(2, 2, 1).groups(2).bias(false)).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 2.0);
        assert_eq!(y.at(0, 1, 1, 1), 4.0);
    }
}
