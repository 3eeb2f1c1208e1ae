//! Datasets: the procedural scene generator, seeded splitting and the
//! directory-of-pairs scanner.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::quantize_unit;
use crate::error::{Error, Result};
use crate::image::{HdrImage, LdrImage};

/// A generated scene and the exposure used to photograph it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub ldr: LdrImage,
    /// Linear radiance normalized to a peak of exactly 1.
    pub hdr: HdrImage,
    /// Gain applied before clipping; radiance above `1 / exposure` saturates.
    pub exposure: f64,
}

pub const SYNTH_GAMMA: f64 = 2.2;

/// Procedural scene: a smooth colored gradient, soft blobs, a dark
/// rectangle and a bright disk light with a faint halo. The LDR view is
/// `quantize8((clip(k · hdr))^(1/2.2))` with a random exposure `k`
/// chosen so the ambient scene stays mostly unclipped while the light
/// saturates.
pub fn synth_scene(seed: u64, width: usize, height: usize) -> Result<SynthScene> {
    if width < 8 || height < 8 {
        return Err(Error::Config(format!(
            "synthetic scenes need extents >= 8, got {width}×{height}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let side = w.min(h);

    let lo: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.04..0.12));
    let hi: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.35));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());

    struct Blob {
        cx: f64,
        cy: f64,
        sigma: f64,
        color: [f64; 3],
    }
    let blobs: Vec<Blob> = (0..3)
        .map(|_| Blob {
            cx: rng.random_range(0.0..w),
            cy: rng.random_range(0.0..h),
            sigma: side * rng.random_range(0.08..0.2),
            color: std::array::from_fn(|_| rng.random_range(0.05..0.4)),
        })
        .collect();

    let (rw, rh) = (w * rng.random_range(0.25..0.5), h * rng.random_range(0.25..0.5));
    let (rx, ry) = (rng.random_range(0.0..w - rw), rng.random_range(0.0..h - rh));

    let radius = side * rng.random_range(0.08..0.14);
    let (lx, ly) = (
        rng.random_range(w * 0.25..w * 0.75),
        rng.random_range(h * 0.25..h * 0.75),
    );
    let light_gain: f64 = rng.random_range(12.0..30.0);
    let tint: [f64; 3] = [1.0, rng.random_range(0.8..1.0), rng.random_range(0.6..0.95)];
    let exposure_margin: f64 = rng.random_range(0.8..1.2);

    let mut ambient = vec![0f64; width * height * 3];
    let mut light = vec![0f64; width * height * 3];
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = (((px / w - 0.5) * dx + (py / h - 0.5) * dy) + 0.75) / 1.5;
            let dark = px >= rx && px < rx + rw && py >= ry && py < ry + rh;
            let d = ((px - lx).powi(2) + (py - ly).powi(2)).sqrt();
            let glow = if d <= radius {
                1.0
            } else {
                0.15 * (-(d - radius).powi(2) / (2.0 * (radius * 0.5).powi(2))).exp()
            };
            for c in 0..3 {
                let mut v = lo[c] + (hi[c] - lo[c]) * t.clamp(0.0, 1.0);
                for b in &blobs {
                    let r2 = (px - b.cx).powi(2) + (py - b.cy).powi(2);
                    v += b.color[c] * (-r2 / (2.0 * b.sigma * b.sigma)).exp();
                }
                if dark {
                    v *= 0.05;
                }
                let i = (y * width + x) * 3 + c;
                ambient[i] = v;
                light[i] = glow * tint[c];
            }
        }
    }
    let ambient_peak = ambient.iter().copied().fold(0.0, f64::max);
    let radiance: Vec<f64> = ambient
        .iter()
        .zip(&light)
        .map(|(a, l)| a + l * light_gain * ambient_peak)
        .collect();
    let peak = radiance.iter().copied().fold(0.0, f64::max);
    let hdr_px: Vec<f32> = radiance.iter().map(|v| (v / peak) as f32).collect();

    // ambient peak in normalized units sits just at the clip level
    let exposure = exposure_margin * peak / ambient_peak;
    let ldr_px = hdr_px
        .iter()
        .map(|&v| {
            let lin = (v as f64 * exposure).clamp(0.0, 1.0);
            quantize_unit(lin.powf(1.0 / SYNTH_GAMMA) as f32) as f32 / 255.0
        })
        .collect();
    Ok(SynthScene {
        ldr: LdrImage::new(width, height, ldr_px)?,
        hdr: HdrImage::new(width, height, hdr_px)?,
        exposure,
    })
}

pub fn synth_pair(seed: u64, width: usize, height: usize) -> Result<(LdrImage, HdrImage)> {
    let s = synth_scene(seed, width, height)?;
    Ok((s.ldr, s.hdr))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub ldr: PathBuf,
    pub hdr: PathBuf,
    pub split: Split,
}

/// Pairs in shuffled order, each tagged with its split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub entries: Vec<IndexEntry>,
}

impl DatasetIndex {
    pub fn of(&self, split: Split) -> impl Iterator<Item = &IndexEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Seeded shuffle of `0..n`; the first `floor(4n/5)` indices train, the
/// rest test.
pub fn split_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 5 {
        return Err(Error::Config(format!("an 80/20 split needs at least 5 pairs, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(n * 4 / 5);
    Ok((order, test))
}

pub fn split_dataset(pairs: &[(PathBuf, PathBuf)], seed: u64) -> Result<DatasetIndex> {
    let (train, test) = split_indices(pairs.len(), seed)?;
    let tag = |ids: Vec<usize>, split| {
        ids.into_iter().map(move |i| IndexEntry {
            ldr: pairs[i].0.clone(),
            hdr: pairs[i].1.clone(),
            split,
        })
    };
    Ok(DatasetIndex {
        entries: tag(train, Split::Train).chain(tag(test, Split::Test)).collect(),
    })
}

/// Finds `<stem>.ppm` / `<stem>.hdr` pairs in `dir`, sorted by stem.
/// PPM files without an RGBE partner are ignored.
pub fn scan_pairs(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut pairs = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("ppm") {
            let hdr = path.with_extension("hdr");
            if hdr.is_file() {
                pairs.push((path, hdr));
            }
        }
    }
    pairs.sort();
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_is_normalized_and_saturates() {
        let s = synth_scene(3, 32, 24).unwrap();
        assert_eq!(s.hdr.peak(), 1.0);
        assert!(s.exposure > 1.0);
        let clip = 1.0 / s.exposure;
        let mut saturated = 0;
        for (h, l) in s.hdr.pixels().iter().zip(s.ldr.pixels()) {
            if *h as f64 > clip {
                assert_eq!(*l, 1.0);
                saturated += 1;
            }
        }
        assert!(saturated > 0);
    }

    #[test]
    fn split_partitions() {
        let (tr, te) = split_indices(10, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(matches!(split_indices(4, 1), Err(Error::Config(_))));
    }
}
