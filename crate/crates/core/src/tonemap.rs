//! Global Reinhard photographic tone mapping.

use crate::error::{Error, Result};
use crate::image::{HdrImage, LdrImage};

pub const REC709: [f64; 3] = [0.2126, 0.7152, 0.0722];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReinhardParams {
    /// Key value `a`.
    pub key: f64,
    pub delta: f64,
    /// Luminance mapped to white; `None` selects the simple `L/(1+L)` curve.
    pub white: Option<f64>,
}

impl Default for ReinhardParams {
    fn default() -> Self {
        Self {
            key: 0.18,
            delta: 1e-6,
            white: None,
        }
    }
}

impl ReinhardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.key.is_finite() && self.key > 0.0 && self.delta.is_finite() && self.delta > 0.0) {
            return Err(Error::Config("reinhard key and delta must be > 0".into()));
        }
        if let Some(w) = self.white {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Config("reinhard white point must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Rec.709 luminance per pixel.
pub fn luminance(img: &HdrImage) -> Vec<f64> {
    img.pixels()
        .chunks_exact(3)
        .map(|p| REC709[0] * p[0] as f64 + REC709[1] * p[1] as f64 + REC709[2] * p[2] as f64)
        .collect()
}

/// `exp(mean(ln(delta + L_w)))`.
pub fn log_average(lum: &[f64], delta: f64) -> f64 {
    (lum.iter().map(|l| (delta + l).ln()).sum::<f64>() / lum.len() as f64).exp()
}

/// Scaled luminance `L_m = (a / L̄) · L_w` for every pixel.
pub fn scaled_luminance(img: &HdrImage, p: &ReinhardParams) -> Vec<f64> {
    let lum = luminance(img);
    let avg = log_average(&lum, p.delta);
    lum.iter().map(|l| p.key / avg * l).collect()
}

/// Maps each pixel's luminance through the Reinhard curve and scales its
/// RGB by `L_d / L_w`, clipping the result to `[0, 1]`.
pub fn reinhard(hdr: &HdrImage, p: &ReinhardParams) -> Result<LdrImage> {
    p.validate()?;
    let lum = luminance(hdr);
    let lm = scaled_luminance(hdr, p);
    let px = hdr
        .pixels()
        .chunks_exact(3)
        .zip(lum.iter().zip(&lm))
        .flat_map(|(rgb, (&lw, &m))| {
            let ld = match p.white {
                None => m / (1.0 + m),
                Some(w) => m * (1.0 + m / (w * w)) / (1.0 + m),
            };
            let ratio = if lw > 0.0 { ld / lw } else { 0.0 };
            [0, 1, 2].map(|c| (rgb[c] as f64 * ratio).clamp(0.0, 1.0) as f32)
        })
        .collect();
    LdrImage::new(hdr.width(), hdr.height(), px)
}
