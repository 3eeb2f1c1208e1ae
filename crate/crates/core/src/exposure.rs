//! Deterministic exposure bracketing with a gamma camera response.
//!
//! A display value `v` is linearized as `v^gamma`, scaled by `2^ev`, clipped
//! and re-encoded. The middle exposure is always the untouched input.

use crate::error::{Error, Result};
use crate::image::LdrImage;

pub const DEFAULT_GAMMA: f64 = 2.2;

/// Three exposures of one scene, two stops apart.
#[derive(Debug, Clone, PartialEq)]
pub struct ExposureStack {
    pub ev_minus2: LdrImage,
    pub ev_0: LdrImage,
    pub ev_plus2: LdrImage,
    pub gamma: f64,
}

impl ExposureStack {
    /// Images in network branch order: EV−2, EV0, EV+2.
    pub fn images(&self) -> [&LdrImage; 3] {
        [&self.ev_minus2, &self.ev_0, &self.ev_plus2]
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("gamma must be finite and > 0, got {gamma}")))
    }
}

/// `clip(((v^gamma) · 2^ev_shift)^(1/gamma), 0, 1)` per component.
pub fn synthesize_exposure(ldr: &LdrImage, ev_shift: f64, gamma: f64) -> Result<LdrImage> {
    if !ev_shift.is_finite() {
        return Err(Error::Config(format!("ev shift must be finite, got {ev_shift}")));
    }
    check_gamma(gamma)?;
    if ev_shift == 0.0 {
        return Ok(ldr.clone());
    }
    let gain = 2f64.powf(ev_shift);
    let px = ldr
        .pixels()
        .iter()
        .map(|&v| ((v as f64).powf(gamma) * gain).powf(1.0 / gamma).clamp(0.0, 1.0) as f32)
        .collect();
    LdrImage::new(ldr.width(), ldr.height(), px)
}

/// EV −2 / 0 / +2 stack around `ldr`.
pub fn bracket(ldr: &LdrImage, gamma: f64) -> Result<ExposureStack> {
    check_gamma(gamma)?;
    Ok(ExposureStack {
        ev_minus2: synthesize_exposure(ldr, -2.0, gamma)?,
        ev_0: ldr.clone(),
        ev_plus2: synthesize_exposure(ldr, 2.0, gamma)?,
        gamma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_half_gray() {
        let img = LdrImage::filled(1, 1, 0.5).unwrap();
        let up = synthesize_exposure(&img, 2.0, 2.2).unwrap();
        let expect = (0.5f64.powf(2.2) * 4.0).powf(1.0 / 2.2);
        assert!((up.pixels()[0] as f64 - expect).abs() < 1e-6);
        assert!((expect - 0.9389).abs() < 1e-4);
    }

    #[test]
    fn saturation_and_identity() {
        let img = LdrImage::new(1, 1, vec![1.0, 0.3, 0.0]).unwrap();
        assert_eq!(synthesize_exposure(&img, 0.0, 2.2).unwrap(), img);
        let up = synthesize_exposure(&img, 2.0, 2.2).unwrap();
        assert_eq!(up.pixels()[0], 1.0);
        assert_eq!(up.pixels()[2], 0.0);
    }

    #[test]
    fn rejects_bad_arguments() {
        let img = LdrImage::filled(1, 1, 0.5).unwrap();
        assert!(matches!(synthesize_exposure(&img, f64::NAN, 2.2), Err(Error::Config(_))));
        assert!(matches!(synthesize_exposure(&img, 1.0, 0.0), Err(Error::Config(_))));
        assert!(matches!(bracket(&img, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn black_is_fixed() {
        let img = LdrImage::filled(3, 2, 0.0).unwrap();
        let s = bracket(&img, 2.2).unwrap();
        for im in s.images() {
            assert_eq!(im, &img);
        }
    }
}
