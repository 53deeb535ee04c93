use super::Plane;
use crate::error::{Error, Result};

/// Returned by [`psnr`] for identical inputs.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Removes `border` samples from every side.
pub fn crop_border(p: &Plane, border: usize) -> Result<Plane> {
    if 2 * border >= p.width || 2 * border >= p.height {
        return Err(Error::Image(format!(
            "border {border} leaves nothing of a {}x{} plane",
            p.width, p.height
        )));
    }
    let (w, h) = (p.width - 2 * border, p.height - 2 * border);
    let data = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| p.get(x + border, y + border))
        .collect();
    Plane::new(w, h, data)
}

/// Peak signal-to-noise ratio over the interior left after cropping
/// `border` pixels per side, with peak 255.
pub fn psnr(a: &Plane, b: &Plane, border: usize) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Image(format!(
            "psnr on {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let (a, b) = (crop_border(a, border)?, crop_border(b, border)?);
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= total);
    g
}

/// Separable "valid" filtering with the SSIM window.
fn filter_valid(data: &[f64], w: usize, h: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * data[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over all window positions that lie fully
/// inside the planes (11x11 Gaussian window, sigma 1.5, L = 255).
pub fn ssim(a: &Plane, b: &Plane) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Image("ssim inputs differ in size".into()));
    }
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::Image(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.width, a.height
        )));
    }
    let g = gaussian_window();
    let (w, h) = (a.width, a.height);
    let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(&a.data, w, h, &g);
    let mu_b = filter_valid(&b.data, w, h, &g);
    let e_aa = filter_valid(&sq(&a.data, &a.data), w, h, &g);
    let e_bb = filter_valid(&sq(&b.data, &b.data), w, h, &g);
    let e_ab = filter_valid(&sq(&a.data, &b.data), w, h, &g);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2))
        })
        .sum();
    Ok(total / n as f64)
}
