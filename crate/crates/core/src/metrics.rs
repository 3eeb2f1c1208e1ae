//! PSNR on tone-mapped images and luminance SSIM on linear radiance.

use crate::error::{Error, Result};
use crate::image::HdrImage;
use crate::tensor::{Scalar, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// `10·log10(peak² / MSE)`, or `+∞` when the inputs are identical.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("psnr", a.shape(), b.shape()));
    }
    psnr_slices(a.data(), b.data(), peak)
}

pub(crate) fn psnr_slices<T: Scalar>(a: &[T], b: &[T], peak: f64) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Contract("psnr of empty images".into()));
    }
    let sse: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum();
    let mse = sse / a.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    })
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut t: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
    t
}

/// Mean RGB per pixel.
pub fn luminance(img: &HdrImage) -> Vec<f64> {
    img.pixels()
        .chunks_exact(3)
        .map(|p| (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0)
        .collect()
}

/// Weighted sum of `f` over every valid window, separably.
fn window_sums(f: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0f64; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * f[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0f64; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM of the RGB-mean luminance over all fully-covered 11×11
/// Gaussian windows. `L` is the largest component of either image,
/// floored at `1e-6`.
pub fn ssim(a: &HdrImage, b: &HdrImage) -> Result<f64> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::shape(
            "ssim",
            &[a.height(), a.width()],
            &[b.height(), b.width()],
        ));
    }
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Config(format!(
            "ssim needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {w}×{h}"
        )));
    }
    let range = (a.peak().max(b.peak()) as f64).max(1e-6);
    let (c1, c2) = ((SSIM_K1 * range).powi(2), (SSIM_K2 * range).powi(2));
    let (x, y) = (luminance(a), luminance(b));
    let taps = gaussian_taps();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
    let mx = window_sums(&x, w, h, &taps);
    let my = window_sums(&y, w, h, &taps);
    let sxx = window_sums(&prod(&x, &x), w, h, &taps);
    let syy = window_sums(&prod(&y, &y), w, h, &taps);
    let sxy = window_sums(&prod(&x, &y), w, h, &taps);
    let n = mx.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cxy = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2))
            / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-image scores and their arithmetic means.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

impl MetricsReport {
    /// Means are accumulated in row order; an empty report has NaN means.
    pub fn from_rows(rows: Vec<MetricsRow>) -> Self {
        let n = rows.len() as f64;
        let mean_psnr_db = rows.iter().map(|r| r.psnr_db).sum::<f64>() / n;
        let mean_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        Self {
            rows,
            mean_psnr_db,
            mean_ssim,
        }
    }

    /// `path,psnr_db,ssim` header, one row per image, then a `mean` row.
    /// Values use the shortest exact decimal form; infinite PSNR is `inf`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("path,psnr_db,ssim\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.name, r.psnr_db, r.ssim));
        }
        s.push_str(&format!("mean,{},{}\n", self.mean_psnr_db, self.mean_ssim));
        s
    }
}
