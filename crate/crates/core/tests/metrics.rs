#![allow(clippy::needless_range_loop)]

use std::path::Path;

use maffsrn::imaging::{bicubic_resize, make_pair, psnr, read_png, rgb_to_y, ssim, Image, Plane};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SSIM evaluated window by window with a full 2-D Gaussian, two-pass
/// (mean first, then central moments).
fn ssim_per_window(a: &Plane, b: &Plane) -> f64 {
    const WIN: usize = 11;
    let sigma = 1.5f64;
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut kernel = [[0.0f64; WIN]; WIN];
    let mut total = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let mut acc = 0.0;
    let mut count = 0;
    for y0 in 0..=a.height - WIN {
        for x0 in 0..=a.width - WIN {
            let at = |p: &Plane, i: usize, j: usize| p.data[(y0 + i) * p.width + x0 + j];
            let mut mu = (0.0, 0.0);
            for i in 0..WIN {
                for j in 0..WIN {
                    let k = kernel[i][j] / total;
                    mu.0 += k * at(a, i, j);
                    mu.1 += k * at(b, i, j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..WIN {
                for j in 0..WIN {
                    let k = kernel[i][j] / total;
                    let (da, db) = (at(a, i, j) - mu.0, at(b, i, j) - mu.1);
                    va += k * da * da;
                    vb += k * db * db;
                    cov += k * da * db;
                }
            }
            acc += ((2.0 * mu.0 * mu.1 + c1) * (2.0 * cov + c2)) / ((mu.0 * mu.0 + mu.1 * mu.1 + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

fn random_plane(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Plane {
    Plane::new(w, h, (0..w * h).map(|_| rng.random_range(0..=255u8) as f64).collect()).unwrap()
}

#[test]
fn psnr_closed_forms() {
    let a = Plane::filled(20, 20, 100.0);
    let b = Plane::filled(20, 20, 101.0);
    let expect = 20.0 * 255f64.log10();
    assert!((psnr(&a, &b, 0).unwrap() - expect).abs() < 1e-12);
    assert!((psnr(&a, &b, 0).unwrap() - 48.1308).abs() < 5e-5);
    assert!((psnr(&a, &b, 4).unwrap() - 48.1308).abs() < 5e-5);
    assert_eq!(psnr(&a, &a, 2).unwrap(), f64::INFINITY);
}

#[test]
fn ssim_closed_forms() {
    let a = Plane::filled(16, 16, 100.0);
    let b = Plane::filled(16, 16, 110.0);
    let c1 = 6.5025;
    let expect = (2.0 * 100.0 * 110.0 + c1) / (100.0f64 * 100.0 + 110.0 * 110.0 + c1);
    let got = ssim(&a, &b).unwrap();
    assert!((got - expect).abs() < 1e-12);
    assert!((got - 0.99548).abs() < 5e-6);
    assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let r = random_plane(&mut rng, 32, 32);
    assert!((ssim(&r, &r).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn windowed_ssim_matches_per_window_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..12 {
        let a = random_plane(&mut rng, 32, 32);
        // mix of unrelated and correlated pairs
        let b = if trial % 2 == 0 {
            random_plane(&mut rng, 32, 32)
        } else {
            let noise = random_plane(&mut rng, 32, 32);
            let data = a
                .data
                .iter()
                .zip(&noise.data)
                .map(|(x, n)| (0.8 * x + 0.2 * n).round())
                .collect();
            Plane::new(32, 32, data).unwrap()
        };
        let got = ssim(&a, &b).unwrap();
        let expect = ssim_per_window(&a, &b);
        assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
    }
}

/// MATLAB `imresize(..., 'bicubic')` weights, transcribed with 1-based
/// indices and the `[1:n, n:-1:1]` edge table.
fn matlab_contributions(in_len: usize, out_len: usize, scale: f64) -> Vec<Vec<(usize, f64)>> {
    let cubic = |x: f64| {
        let a = x.abs();
        let (a2, a3) = (a * a, a * a * a);
        (1.5 * a3 - 2.5 * a2 + 1.0) * f64::from(u8::from(a <= 1.0))
            + (-0.5 * a3 + 2.5 * a2 - 4.0 * a + 2.0) * f64::from(u8::from(a > 1.0 && a <= 2.0))
    };
    let (kernel_width, antialias) = if scale < 1.0 { (4.0 / scale, true) } else { (4.0, false) };
    let aux: Vec<usize> = (1..=in_len).chain((1..=in_len).rev()).collect();
    (1..=out_len)
        .map(|x| {
            let u = x as f64 / scale + 0.5 * (1.0 - 1.0 / scale);
            let left = (u - kernel_width / 2.0).floor() as i64;
            let p = kernel_width.ceil() as i64 + 2;
            let mut taps: Vec<(usize, f64)> = (0..p)
                .map(|k| {
                    let idx = left + k;
                    let w = if antialias {
                        scale * cubic(scale * (u - idx as f64))
                    } else {
                        cubic(u - idx as f64)
                    };
                    let m = (idx - 1).rem_euclid(aux.len() as i64) as usize;
                    (aux[m] - 1, w)
                })
                .collect();
            let sum: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= sum);
            taps
        })
        .collect()
}

fn matlab_round(v: f64) -> u8 {
    v.clamp(0.0, 255.0).round() as u8
}

/// Resizes an 8-bit image the MATLAB way: one dimension at a time, the
/// dimension with the smaller scale first, rounding back to uint8 at the end.
fn matlab_imresize(img: &Image, out_w: usize, out_h: usize) -> Image {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let sy = out_h as f64 / h as f64;
    let sx = out_w as f64 / w as f64;
    let rows = matlab_contributions(h, out_h, sy);
    let cols = matlab_contributions(w, out_w, sx);
    let mut out = vec![0u8; out_w * out_h * ch];
    for c in 0..ch {
        let src: Vec<f64> = (0..w * h).map(|i| img.data()[i * ch + c] as f64).collect();
        let mut tmp = vec![0.0; w * out_h];
        for (oy, taps) in rows.iter().enumerate() {
            for x in 0..w {
                tmp[oy * w + x] = taps.iter().map(|&(y, wt)| wt * src[y * w + x]).sum();
            }
        }
        for oy in 0..out_h {
            for (ox, taps) in cols.iter().enumerate() {
                let v: f64 = taps.iter().map(|&(x, wt)| wt * tmp[oy * w + x]).sum();
                out[(oy * out_w + ox) * ch + c] = matlab_round(v);
            }
        }
    }
    Image::new(out_w, out_h, ch, out).unwrap()
}

/// `rgb2ycbcr` on uint8 input returns rounded uint8 luma.
fn matlab_y(img: &Image) -> Vec<f64> {
    img.data()
        .chunks(3)
        .map(|p| {
            let y = (65.481 * p[0] as f64 + 128.553 * p[1] as f64 + 24.966 * p[2] as f64) / 255.0 + 16.0;
            y.round()
        })
        .collect()
}

fn reference_psnr(hr: &Image, scale: usize) -> f64 {
    let (w, h) = (hr.width() - hr.width() % scale, hr.height() - hr.height() % scale);
    let hr = hr.crop(0, 0, w, h).unwrap();
    let lr = matlab_imresize(&hr, w / scale, h / scale);
    let up = matlab_imresize(&lr, w, h);
    let (a, b) = (matlab_y(&up), matlab_y(&hr));
    let mut se = 0.0;
    let mut n = 0;
    for y in scale..h - scale {
        for x in scale..w - scale {
            let d = a[y * w + x] - b[y * w + x];
            se += d * d;
            n += 1;
        }
    }
    10.0 * (255.0f64 * 255.0 / (se / n as f64)).log10()
}

fn fixture(name: &str) -> Image {
    read_png(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)).unwrap()
}

#[test]
fn bicubic_round_trip_matches_reference_pipeline() {
    for name in ["astronaut_crop.png", "coffee_crop.png"] {
        let img = fixture(name);
        for scale in 2..=4 {
            let pair = make_pair(&img, scale).unwrap();
            let up = bicubic_resize(&pair.lr, pair.hr.width(), pair.hr.height()).unwrap();
            let ours = psnr(&rgb_to_y(&up), &rgb_to_y(&pair.hr), scale).unwrap();
            let reference = reference_psnr(&img, scale);
            assert!(
                (ours - reference).abs() <= 0.05,
                "{name} x{scale}: {ours:.4} vs reference {reference:.4}"
            );
        }
    }
}

#[test]
fn reference_resize_weights_match_library_taps() {
    for (n, m) in [(12, 4), (12, 6), (10, 20), (7, 21), (9, 3), (16, 4)] {
        let ours = maffsrn::imaging::resize::axis_weights(n, m);
        let theirs = matlab_contributions(n, m, m as f64 / n as f64);
        for (a, b) in ours.taps.iter().zip(&theirs) {
            let mut dense_a = vec![0.0; n];
            let mut dense_b = vec![0.0; n];
            a.iter().for_each(|&(i, w)| dense_a[i] += w);
            b.iter().for_each(|&(i, w)| dense_b[i] += w);
            for (x, y) in dense_a.iter().zip(&dense_b) {
                assert!((x - y).abs() < 1e-12, "{n}->{m}: {dense_a:?} vs {dense_b:?}");
            }
        }
    }
}
