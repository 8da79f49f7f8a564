use crate::error::{config_err, Result};
use crate::tensor::{Real, Tensor};

/// `10·log10(peak²/MSE)`; identical inputs give `+∞`.
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    a.expect_same_shape(b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.f64() - y.f64()).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(n: usize, sigma: f64) -> Vec<f64> {
    let r = (n / 2) as f64;
    let raw: Vec<f64> = (0..n).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of one `h×w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = taps.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for xx in 0..ow {
            rows[y * ow + xx] = (0..n).map(|k| taps[k] * x[y * w + xx + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for xx in 0..ow {
            out[y * ow + xx] = (0..n).map(|k| taps[k] * rows[(y + k) * ow + xx]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean local SSIM over all valid window positions, averaged over channels.
/// Dynamic range 1.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_same_shape(b)?;
    let (c, h, w) = a.dims3()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return config_err!("SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}");
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut total = 0.0;
    for ch in 0..c {
        let plane = |t: &Tensor<T>| -> Vec<f64> { t.data()[ch * h * w..(ch + 1) * h * w].iter().map(|v| v.f64()).collect() };
        let (x, y) = (plane(a), plane(b));
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<f64>>();
        let (mx, _, _) = filter_valid(&x, h, w, &taps);
        let (my, _, _) = filter_valid(&y, h, w, &taps);
        let (sxx, _, _) = filter_valid(&prod(&x, &x), h, w, &taps);
        let (syy, _, _) = filter_valid(&prod(&y, &y), h, w, &taps);
        let (sxy, oh, ow) = filter_valid(&prod(&x, &y), h, w, &taps);
        let mut acc = 0.0;
        for i in 0..oh * ow {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / (oh * ow) as f64;
    }
    Ok(total / c as f64)
}

/// Aggregate and per-image quality.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    /// `(psnr, ssim)` per image.
    pub per_image: Vec<(f64, f64)>,
}

impl MetricReport {
    pub fn from_images(per_image: Vec<(f64, f64)>) -> Self {
        let n = per_image.len().max(1) as f64;
        Self {
            psnr_db: per_image.iter().map(|p| p.0).sum::<f64>() / n,
            ssim: per_image.iter().map(|p| p.1).sum::<f64>() / n,
            per_image,
        }
    }

    /// One row per image, then the mean.
    pub fn to_text(&self) -> String {
        let mut s = String::from("image psnr_db ssim\n");
        for (i, (p, q)) in self.per_image.iter().enumerate() {
            s += &format!("{i} {p:.4} {q:.6}\n");
        }
        s += &format!("mean {:.4} {:.6}\n", self.psnr_db, self.ssim);
        s
    }
}
