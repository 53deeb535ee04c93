//! Bicubic resampling with the Keys kernel (`a = -0.5`), half-pixel
//! centres, symmetric edge extension and kernel widening when
//! downscaling.

use super::{Image, Plane};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax < 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Normalised taps `(source index, weight)` for each output sample along
/// one axis.
#[derive(Clone, Debug)]
pub struct AxisWeights {
    pub in_len: usize,
    pub taps: Vec<Vec<(usize, f64)>>,
}

/// Reflects an out-of-range index back into `[0, len)`, repeating the edge
/// sample (`... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...`).
fn mirror(i: isize, len: usize) -> usize {
    let period = 2 * len as isize;
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

pub fn axis_weights(in_len: usize, out_len: usize) -> AxisWeights {
    let scale = out_len as f64 / in_len as f64;
    let kscale = scale.min(1.0);
    let width = 4.0 / kscale;
    let span = width.ceil() as isize + 2;
    let taps = (0..out_len)
        .map(|d| {
            let center = (d as f64 + 0.5) / scale - 0.5;
            let left = (center - width / 2.0).floor() as isize;
            let mut raw: Vec<(isize, f64)> = (left..left + span)
                .map(|j| (j, kscale * cubic(kscale * (center - j as f64))))
                .filter(|&(_, w)| w != 0.0)
                .collect();
            let total: f64 = raw.iter().map(|&(_, w)| w).sum();
            raw.iter_mut().for_each(|(_, w)| *w /= total);
            // merge taps that mirror onto the same source sample
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(raw.len());
            for (j, w) in raw {
                let src = mirror(j, in_len);
                match merged.iter_mut().find(|(s, _)| *s == src) {
                    Some((_, acc)) => *acc += w,
                    None => merged.push((src, w)),
                }
            }
            merged
        })
        .collect();
    AxisWeights { in_len, taps }
}

/// Resizes a row-major `w x h` plane, rows (vertical axis) first.
pub fn resize_plane<T: Scalar>(src: &[T], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<T> {
    let rows = axis_weights(h, out_h);
    let cols = axis_weights(w, out_w);
    let mut tmp = vec![T::zero(); out_h * w];
    for (oy, taps) in rows.taps.iter().enumerate() {
        let dst = &mut tmp[oy * w..(oy + 1) * w];
        for &(sy, wt) in taps {
            let wt = T::from_f64(wt);
            let row = &src[sy * w..(sy + 1) * w];
            for (d, &s) in dst.iter_mut().zip(row) {
                *d = *d + wt * s;
            }
        }
    }
    let mut out = vec![T::zero(); out_h * out_w];
    for oy in 0..out_h {
        let row = &tmp[oy * w..(oy + 1) * w];
        for (ox, taps) in cols.taps.iter().enumerate() {
            out[oy * out_w + ox] = taps
                .iter()
                .fold(T::zero(), |acc, &(sx, wt)| acc + T::from_f64(wt) * row[sx]);
        }
    }
    out
}

/// Transpose of [`resize_plane`] (maps an output-sized gradient back onto
/// the input grid).
pub fn resize_plane_adjoint<T: Scalar>(grad: &[T], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<T> {
    let rows = axis_weights(h, out_h);
    let cols = axis_weights(w, out_w);
    let mut tmp = vec![T::zero(); out_h * w];
    for oy in 0..out_h {
        let row = &mut tmp[oy * w..(oy + 1) * w];
        for (ox, taps) in cols.taps.iter().enumerate() {
            let g = grad[oy * out_w + ox];
            for &(sx, wt) in taps {
                row[sx] = row[sx] + T::from_f64(wt) * g;
            }
        }
    }
    let mut out = vec![T::zero(); h * w];
    for (oy, taps) in rows.taps.iter().enumerate() {
        let src = &tmp[oy * w..(oy + 1) * w];
        for &(sy, wt) in taps {
            let wt = T::from_f64(wt);
            let dst = &mut out[sy * w..(sy + 1) * w];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = *d + wt * s;
            }
        }
    }
    out
}

/// Bicubic resize of every plane of a tensor.
pub fn resize_tensor<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize_bicubic", "zero target extent"));
    }
    let s = x.shape();
    let out = Shape::new(s.n, s.c, out_h, out_w);
    let mut data = Vec::with_capacity(out.numel());
    for plane in x.data().chunks(s.plane()) {
        data.extend(resize_plane(plane, s.w, s.h, out_w, out_h));
    }
    let t = Tensor::from_vec(out, data)?;
    crate::tensor::ensure_finite("resize_bicubic", t.data())?;
    Ok(t)
}

pub fn resize_tensor_adjoint<T: Scalar>(grad: &Tensor<T>, input: Shape) -> Result<Tensor<T>> {
    let g = grad.shape();
    if g.n != input.n || g.c != input.c {
        return Err(Error::shape("resize_bicubic_backward", format!("{g} vs {input}")));
    }
    let mut data = Vec::with_capacity(input.numel());
    for plane in grad.data().chunks(g.plane()) {
        data.extend(resize_plane_adjoint(plane, input.w, input.h, g.w, g.h));
    }
    Tensor::from_vec(input, data)
}

pub fn bicubic_resize_plane(p: &Plane, out_w: usize, out_h: usize) -> Result<Plane> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Image("resize target must be at least 1x1".into()));
    }
    Plane::new(out_w, out_h, resize_plane(&p.data, p.width, p.height, out_w, out_h))
}

/// Resizes each channel in float and quantizes the result back to 8 bits.
pub fn bicubic_resize(img: &Image, out_w: usize, out_h: usize) -> Result<Image> {
    let planes = img
        .to_planes()
        .iter()
        .map(|p| bicubic_resize_plane(p, out_w, out_h))
        .collect::<Result<Vec<_>>>()?;
    Image::from_planes(&planes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_interpolates() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert!((cubic(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn mirror_repeats_edges() {
        let idx: Vec<usize> = (-3..7).map(|i| mirror(i, 4)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
    }

    #[test]
    fn same_size_is_identity_on_planes() {
        let p = Plane::new(5, 4, (0..20).map(|i| (i as f64 * 1.37).sin() * 100.0).collect()).unwrap();
        assert_eq!(bicubic_resize_plane(&p, 5, 4).unwrap(), p);
    }

    #[test]
    fn constant_stays_constant() {
        let img = Image::filled(17, 11, 3, 77).unwrap();
        for (w, h) in [(5, 3), (34, 22), (51, 33), (1, 1)] {
            let out = bicubic_resize(&img, w, h).unwrap();
            assert!(out.data().iter().all(|&v| v == 77));
        }
    }

    #[test]
    fn weights_are_normalised() {
        for (i, o) in [(10, 5), (9, 3), (8, 2), (5, 10), (3, 12), (7, 7)] {
            for taps in axis_weights(i, o).taps {
                let s: f64 = taps.iter().map(|t| t.1).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn downscale_row_by_two_matches_hand_weights() {
        // Halving widens the kernel to 0.5 * cubic(d / 2). At tap distances 0.5, 1.5,
        // 2.5, 3.5 that is 0.43359375, 0.11328125, -0.03515625, -0.01171875 (sum 0.5
        // per side). Output 1 sits at 2.5 and sees the two 255s at distance 0.5.
        // Output 0 sits at 0.5; mirroring puts 255 at distances 1.5 (sample 2),
        // 2.5 (sample 3) and 3.5 (tap -3 reflects onto sample 2).
        let row = Plane::new(6, 1, vec![0.0, 0.0, 255.0, 255.0, 0.0, 0.0]).unwrap();
        let out = bicubic_resize_plane(&row, 3, 1).unwrap();
        let mid = 255.0 * 2.0 * 0.43359375;
        let edge = 255.0 * (0.11328125 - 0.03515625 - 0.01171875);
        for (got, want) in out.data.iter().zip([edge, mid, edge]) {
            assert!((got - want).abs() <= 1.0, "{got} vs {want}");
        }
    }

    #[test]
    fn adjoint_matches_dot_product() {
        let (w, h, ow, oh) = (7, 5, 3, 11);
        let x: Vec<f64> = (0..w * h).map(|i| (i as f64 * 0.7).cos()).collect();
        let g: Vec<f64> = (0..ow * oh).map(|i| (i as f64 * 0.3).sin()).collect();
        let y = resize_plane(&x, w, h, ow, oh);
        let gx = resize_plane_adjoint(&g, w, h, ow, oh);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&gx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
