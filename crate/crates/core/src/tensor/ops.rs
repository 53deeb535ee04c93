use rayon::prelude::*;

use super::{checked, same_shape, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    checked("add", Tensor::from_parts(a.shape(), data))
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    checked("mul", Tensor::from_parts(a.shape(), data))
}

pub fn scale<T: Scalar>(a: &Tensor<T>, factor: T) -> Result<Tensor<T>> {
    let data = a.data().iter().map(|&x| x * factor).collect();
    checked("scale", Tensor::from_parts(a.shape(), data))
}

pub fn relu<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let data = a.data().iter().map(|&x| x.max(T::zero())).collect();
    checked("relu", Tensor::from_parts(a.shape(), data))
}

pub fn sigmoid<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let data = a.data().iter().map(|&x| T::one() / (T::one() + (-x).exp())).collect();
    checked("sigmoid", Tensor::from_parts(a.shape(), data))
}

/// Sum of all elements, accumulated in storage order.
pub fn sum<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let total = a.data().iter().fold(T::zero(), |acc, &v| acc + v);
    checked("sum", Tensor::scalar(total))
}

/// Stacks the channels of `a` followed by those of `b`.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
        return Err(Error::shape("concat_channels", format!("{sa} vs {sb}")));
    }
    let out = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let mut data = Vec::with_capacity(out.numel());
    let (la, lb) = (sa.c * sa.plane(), sb.c * sb.plane());
    for n in 0..sa.n {
        data.extend_from_slice(&a.data()[n * la..(n + 1) * la]);
        data.extend_from_slice(&b.data()[n * lb..(n + 1) * lb]);
    }
    Ok(Tensor::from_parts(out, data))
}

/// Inverse of [`concat_channels`]: splits off the first `c_first` channels.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, c_first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = x.shape();
    if c_first == 0 || c_first >= s.c {
        return Err(Error::shape(
            "split_channels",
            format!("cannot split {} channels at {c_first}", s.c),
        ));
    }
    let c_second = s.c - c_first;
    let (la, lb) = (c_first * s.plane(), c_second * s.plane());
    let mut a = Vec::with_capacity(s.n * la);
    let mut b = Vec::with_capacity(s.n * lb);
    for n in 0..s.n {
        let base = n * (la + lb);
        a.extend_from_slice(&x.data()[base..base + la]);
        b.extend_from_slice(&x.data()[base + la..base + la + lb]);
    }
    Ok((
        Tensor::from_parts(Shape::new(s.n, c_first, s.h, s.w), a),
        Tensor::from_parts(Shape::new(s.n, c_second, s.h, s.w), b),
    ))
}

/// Depth-to-space: `out[n][c][h*r+i][w*r+j] = in[n][c*r*r + i*r + j][h][w]`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || !s.c.is_multiple_of(r * r) {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("{} channels not divisible by {r}^2", s.c),
        ));
    }
    let out = Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r);
    Ok(Tensor::from_fn(out, |n, c, y, xx| {
        x.at(n, c * r * r + (y % r) * r + xx % r, y / r, xx / r)
    }))
}

/// Space-to-depth, the inverse permutation of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(Error::shape(
            "pixel_unshuffle",
            format!("{}x{} not divisible by {r}", s.h, s.w),
        ));
    }
    let out = Shape::new(s.n, s.c * r * r, s.h / r, s.w / r);
    Ok(Tensor::from_fn(out, |n, c, y, xx| {
        let (base, sub) = (c / (r * r), c % (r * r));
        x.at(n, base, y * r + sub / r, xx * r + sub % r)
    }))
}

/// Treats the channels as a `groups x (C/groups)` matrix and transposes it:
/// output channel `i*groups + j` holds input channel `j*(C/groups) + i`.
/// Shuffling with `C/groups` groups undoes it.
pub fn channel_shuffle<T: Scalar>(x: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if groups == 0 || !s.c.is_multiple_of(groups) {
        return Err(Error::shape(
            "channel_shuffle",
            format!("{} channels not divisible by {groups} groups", s.c),
        ));
    }
    let per_group = s.c / groups;
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.numel());
    for n in 0..s.n {
        for oc in 0..s.c {
            let (i, j) = (oc / groups, oc % groups);
            let ic = j * per_group + i;
            let start = (n * s.c + ic) * plane;
            data.extend_from_slice(&x.data()[start..start + plane]);
        }
    }
    Ok(Tensor::from_parts(s, data))
}

/// Per-axis interpolation taps `(lo, hi, frac)` for half-pixel bilinear
/// resampling from `src` to `dst` samples, with clamped source coordinates.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let pos = ((d as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Bilinear resize of every plane to `out_h x out_w` using half-pixel
/// centres (no corner alignment).
pub fn upsample_bilinear<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("upsample_bilinear", "zero target extent"));
    }
    let s = x.shape();
    let rows = bilinear_taps(s.h, out_h);
    let cols = bilinear_taps(s.w, out_w);
    let out = Shape::new(s.n, s.c, out_h, out_w);
    let mut data = vec![T::zero(); out.numel()];
    data.par_chunks_mut(out.plane()).enumerate().for_each(|(p, plane)| {
        let src = &x.data()[p * s.plane()..(p + 1) * s.plane()];
        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
            let fy = T::from_f64(fy);
            for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                let fx = T::from_f64(fx);
                let top = src[y0 * s.w + x0] * (T::one() - fx) + src[y0 * s.w + x1] * fx;
                let bot = src[y1 * s.w + x0] * (T::one() - fx) + src[y1 * s.w + x1] * fx;
                plane[oy * out_w + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    });
    checked("upsample_bilinear", Tensor::from_parts(out, data))
}

/// Adjoint of [`upsample_bilinear`]: scatters `grad` back onto an input of
/// shape `input`.
pub fn upsample_bilinear_backward<T: Scalar>(grad: &Tensor<T>, input: Shape) -> Result<Tensor<T>> {
    let g = grad.shape();
    if g.n != input.n || g.c != input.c {
        return Err(Error::shape(
            "upsample_bilinear_backward",
            format!("grad {g} vs input {input}"),
        ));
    }
    let rows = bilinear_taps(input.h, g.h);
    let cols = bilinear_taps(input.w, g.w);
    let mut data = vec![T::zero(); input.numel()];
    data.par_chunks_mut(input.plane()).enumerate().for_each(|(p, plane)| {
        let gp = &grad.data()[p * g.plane()..(p + 1) * g.plane()];
        for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
            let fy = T::from_f64(fy);
            for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                let fx = T::from_f64(fx);
                let v = gp[oy * g.w + ox];
                let (top, bot) = (v * (T::one() - fy), v * fy);
                plane[y0 * input.w + x0] = plane[y0 * input.w + x0] + top * (T::one() - fx);
                plane[y0 * input.w + x1] = plane[y0 * input.w + x1] + top * fx;
                plane[y1 * input.w + x0] = plane[y1 * input.w + x0] + bot * (T::one() - fx);
                plane[y1 * input.w + x1] = plane[y1 * input.w + x1] + bot * fx;
            }
        }
    });
    checked("upsample_bilinear_backward", Tensor::from_parts(input, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channels(values: &[f32]) -> Tensor<f32> {
        Tensor::from_vec(Shape::new(1, values.len(), 1, 1), values.to_vec()).unwrap()
    }

    #[test]
    fn pixel_shuffle_definition() {
        let y = pixel_shuffle(&channels(&[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        let x = channels(&[5.0, 6.0]);
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
        assert!(pixel_shuffle(&channels(&[1.0, 2.0, 3.0]), 2).is_err());
    }

    #[test]
    fn channel_shuffle_transposes_groups() {
        let y = channel_shuffle(&channels(&[0.0, 1.0, 2.0, 3.0]), 2).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 1.0, 3.0]);
        let x = channels(&[0.0, 1.0, 2.0]);
        assert_eq!(channel_shuffle(&x, 1).unwrap(), x);
        assert!(channel_shuffle(&x, 2).is_err());
    }

    #[test]
    fn shuffle_by_two_then_three_restores_six_channels() {
        let x = channels(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let once = channel_shuffle(&x, 2).unwrap();
        assert_eq!(once.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert_eq!(channel_shuffle(&once, 3).unwrap(), x);
    }

    #[test]
    fn bilinear_half_pixel_row() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.0f64, 1.0]).unwrap();
        let y = upsample_bilinear(&x, 1, 4).unwrap();
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn bilinear_constant_and_identity() {
        let c = Tensor::<f32>::full(Shape::new(1, 2, 3, 5), 5.0);
        let y = upsample_bilinear(&c, 7, 11).unwrap();
        assert!(y.data().iter().all(|&v| v == 5.0));
        let x = Tensor::<f32>::from_fn(Shape::new(1, 1, 4, 3), |_, _, h, w| (h * 3 + w) as f32);
        assert_eq!(upsample_bilinear(&x, 4, 3).unwrap(), x);
    }

    #[test]
    fn pointwise_basics() {
        let z = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        assert!(sigmoid(&z).unwrap().data().iter().all(|&v| v == 0.5));
        let x = channels(&[2.0, -4.0]);
        assert_eq!(scale(&x, 0.5).unwrap().data(), &[1.0, -2.0]);
        assert_eq!(relu(&x).unwrap().data(), &[2.0, 0.0]);
        let cat = concat_channels(&channels(&[1.0, 2.0]), &channels(&[3.0])).unwrap();
        assert_eq!(cat.data(), &[1.0, 2.0, 3.0]);
        let (a, b) = split_channels(&cat, 2).unwrap();
        assert_eq!((a.data(), b.data()), (&[1.0, 2.0][..], &[3.0][..]));
        assert!(add(&x, &channels(&[1.0])).is_err());
        assert!(mul(&x, &channels(&[1.0])).is_err());
    }

    #[test]
    fn concat_interleaves_batches() {
        let a = Tensor::<f32>::from_fn(Shape::new(2, 1, 1, 1), |n, _, _, _| n as f32);
        let b = Tensor::<f32>::from_fn(Shape::new(2, 2, 1, 1), |n, c, _, _| 10.0 + (n * 2 + c) as f32);
        let cat = concat_channels(&a, &b).unwrap();
        assert_eq!(cat.data(), &[0.0, 10.0, 11.0, 1.0, 12.0, 13.0]);
    }
}
