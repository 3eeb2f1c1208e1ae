//! LDR and HDR RGB images and their conversion to network tensors.
//!
//! Pixels are stored interleaved (`(y * width + x) * 3 + channel`), top row first.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Display-referred image with every component in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LdrImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
    source_depth: u8,
}

/// Scene-referred linear radiance in relative units; components finite and `>= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HdrImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

fn check_extent(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Config(format!(
            "image extents must be positive, got {width}×{height}"
        )));
    }
    if width * height * 3 != len {
        return Err(Error::Contract(format!(
            "{width}×{height} RGB image needs {} components, got {len}",
            width * height * 3
        )));
    }
    Ok(())
}

impl LdrImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        check_extent(width, height, pixels.len())?;
        if let Some((i, v)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Validation(format!(
                "LDR component {i} is {v}, outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            source_depth: 8,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height * 3])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn source_depth(&self) -> u8 {
        self.source_depth
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// 1×3×H×W tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        interleaved_to_tensor(self.width, self.height, &self.pixels)
    }
}

impl HdrImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        check_extent(width, height, pixels.len())?;
        if let Some((i, v)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::Validation(format!(
                "HDR component {i} is {v}; radiance must be finite and non-negative"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height * 3])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Largest component.
    pub fn peak(&self) -> f32 {
        self.pixels.iter().copied().fold(0.0, f32::max)
    }

    /// Multiplies every component by `k >= 0`.
    pub fn scaled(&self, k: f32) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.pixels.iter().map(|v| v * k).collect(),
        )
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        interleaved_to_tensor(self.width, self.height, &self.pixels)
    }

    /// Builds an image from sample `n` of an N×3×H×W tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, n: usize) -> Result<Self> {
        let (w, h, pixels) = tensor_to_interleaved(t, n)?;
        Self::new(w, h, pixels)
    }
}

pub(crate) fn interleaved_to_tensor<T: Scalar>(w: usize, h: usize, px: &[f32]) -> Tensor<T> {
    let plane = w * h;
    Tensor::from_fn(&[1, 3, h, w], |i| {
        let (c, p) = (i / plane, i % plane);
        T::of(px[p * 3 + c] as f64)
    })
}

pub(crate) fn tensor_to_interleaved<T: Scalar>(
    t: &Tensor<T>,
    n: usize,
) -> Result<(usize, usize, Vec<f32>)> {
    let (batch, c, h, w) = t.dims4()?;
    if c != 3 || n >= batch {
        return Err(Error::Contract(format!(
            "cannot take RGB sample {n} from tensor of shape {:?}",
            t.shape()
        )));
    }
    let plane = w * h;
    let base = n * 3 * plane;
    let data = t.data();
    let mut pixels = Vec::with_capacity(plane * 3);
    for p in 0..plane {
        for ch in 0..3 {
            pixels.push(data[base + ch * plane + p].as_f64() as f32);
        }
    }
    Ok((w, h, pixels))
}

/// Stacks equal-size 1×C×H×W tensors into an N×C×H×W batch.
pub fn stack_batch<T: Scalar>(items: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = items
        .first()
        .ok_or_else(|| Error::Contract("cannot stack an empty batch".into()))?;
    let (_, c, h, w) = first.dims4()?;
    let mut data = Vec::with_capacity(items.len() * c * h * w);
    for t in items {
        if t.shape() != first.shape() {
            return Err(Error::shape("stack_batch", first.shape(), t.shape()));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new(vec![items.len(), c, h, w], data)
}

fn resize_interleaved(
    src: &[f32],
    w: usize,
    h: usize,
    new_w: usize,
    new_h: usize,
) -> Result<Vec<f32>> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::Config(format!(
            "resize target must be positive, got {new_w}×{new_h}"
        )));
    }
    // Half-pixel-centred source coordinate, clamped to the edge samples.
    let taps = |dst: usize, src_len: usize, dst_len: usize| {
        let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5)
            .clamp(0.0, (src_len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..new_w).map(|x| taps(x, w, new_w)).collect();
    let mut out = Vec::with_capacity(new_w * new_h * 3);
    for y in 0..new_h {
        let (y0, y1, fy) = taps(y, h, new_h);
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let at = |yy: usize, xx: usize| src[(yy * w + xx) * 3 + c] as f64;
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    Ok(out)
}

/// Bilinear resampling with half-pixel-centred sample positions.
pub trait Resize: Sized {
    fn resize_bilinear(&self, new_w: usize, new_h: usize) -> Result<Self>;
}

impl Resize for LdrImage {
    fn resize_bilinear(&self, new_w: usize, new_h: usize) -> Result<Self> {
        let px = resize_interleaved(&self.pixels, self.width, self.height, new_w, new_h)?;
        // interpolation weights are convex, so only rounding can leave [0, 1]
        LdrImage::new(new_w, new_h, px.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
    }
}

impl Resize for HdrImage {
    fn resize_bilinear(&self, new_w: usize, new_h: usize) -> Result<Self> {
        let px = resize_interleaved(&self.pixels, self.width, self.height, new_w, new_h)?;
        HdrImage::new(new_w, new_h, px.into_iter().map(|v| v.max(0.0)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants_are_enforced() {
        assert!(LdrImage::new(1, 1, vec![0.0, 0.5, 1.5]).is_err());
        assert!(HdrImage::new(1, 1, vec![0.0, f32::NAN, 1.0]).is_err());
        assert!(HdrImage::new(1, 1, vec![0.0, -1.0, 1.0]).is_err());
        assert!(HdrImage::new(0, 1, vec![]).is_err());
        assert!(HdrImage::new(2, 1, vec![1.0; 3]).is_err());
    }

    #[test]
    fn tensor_layout_round_trips() {
        let px: Vec<f32> = (0..2 * 3 * 3).map(|i| i as f32).collect();
        let img = HdrImage::new(3, 2, px).unwrap();
        let t = img.to_tensor::<f64>();
        assert_eq!(t.shape(), &[1, 3, 2, 3]);
        // red plane holds components 0, 3, 6, ...
        assert_eq!(&t.data()[..3], &[0.0, 3.0, 6.0]);
        assert_eq!(HdrImage::from_tensor(&t, 0).unwrap(), img);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = HdrImage::new(2, 2, (0..12).map(|i| i as f32).collect()).unwrap();
        assert_eq!(img.resize_bilinear(2, 2).unwrap(), img);
        let flat = HdrImage::filled(7, 5, 0.4).unwrap().resize_bilinear(512, 512).unwrap();
        assert!(flat.pixels().iter().all(|v| (v - 0.4).abs() < 1e-6));
    }

    #[test]
    fn resize_half_pixel_closed_form() {
        // src centres at 0 and 1; dst x maps to (x + 0.5)/2 - 0.5 = -0.25, 0.25, 0.75, 1.25
        let img = HdrImage::new(2, 1, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let out = img.resize_bilinear(4, 1).unwrap();
        let reds: Vec<f32> = (0..4).map(|x| out.pixel(x, 0)[0]).collect();
        assert_eq!(reds, vec![0.0, 0.25, 0.75, 1.0]);
        assert!(matches!(img.resize_bilinear(0, 3), Err(Error::Config(_))));
    }
}
