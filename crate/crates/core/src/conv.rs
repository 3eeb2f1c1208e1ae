//! Stride-1, "same"-padded, dilated 2-D convolution kernels.
//!
//! Both passes lower to GEMM through an im2col buffer. Samples of a batch
//! are processed independently (in parallel when enabled); weight and bias
//! gradients are reduced over samples in index order so results do not
//! depend on scheduling.

use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::Scalar;

/// Extents of one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    /// Validates `input` (N×Ci×H×W) and `weight` (Co×Ci×kH×kW) shapes.
    pub fn new(input: &[usize], weight: &[usize], dilation: usize) -> Result<Self> {
        if dilation < 1 {
            return Err(Error::Config(format!(
                "convolution dilation must be >= 1, got {dilation}"
            )));
        }
        let (&[n, ci, h, w], &[co, wci, kh, kw]) = (input, weight) else {
            return Err(Error::shape("conv2d", input, weight));
        };
        if ci != wci || kh == 0 || kw == 0 {
            return Err(Error::shape("conv2d", input, weight));
        }
        Ok(Self {
            batch: n,
            in_channels: ci,
            out_channels: co,
            height: h,
            width: w,
            kernel_h: kh,
            kernel_w: kw,
            dilation,
        })
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1
    }

    /// Offset of the first kernel tap relative to the output pixel (negative padding).
    fn origin(&self) -> (isize, isize) {
        (
            -(((self.kernel_h - 1) * self.dilation / 2) as isize),
            -(((self.kernel_w - 1) * self.dilation / 2) as isize),
        )
    }

    /// For a source offset `d`, the half-open range of output coordinates
    /// `[lo, hi)` whose source `x + d` lies inside `[0, extent)`.
    fn valid_range(extent: usize, d: isize) -> (usize, usize) {
        let lo = (-d).clamp(0, extent as isize) as usize;
        let hi = (extent as isize - d).clamp(0, extent as isize) as usize;
        (lo, hi.max(lo))
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.height, self.width]
    }

    /// Multiply-accumulate count of one forward pass.
    pub fn macs(&self) -> usize {
        self.batch * self.out_channels * self.plane() * self.patch()
    }
}

fn im2col<T: Scalar>(g: &ConvGeometry, sample: &[T], col: &mut [T]) {
    let (h, w, plane) = (g.height, g.width, g.plane());
    let (oy, ox) = g.origin();
    let mut row = 0;
    for ic in 0..g.in_channels {
        let src = &sample[ic * plane..(ic + 1) * plane];
        for ky in 0..g.kernel_h {
            let dy = oy + (ky * g.dilation) as isize;
            let (ylo, yhi) = ConvGeometry::valid_range(h, dy);
            for kx in 0..g.kernel_w {
                let dx = ox + (kx * g.dilation) as isize;
                let (xlo, xhi) = ConvGeometry::valid_range(w, dx);
                let dst = &mut col[row * plane..(row + 1) * plane];
                dst.fill(T::zero());
                if xlo == xhi {
                    row += 1;
                    continue;
                }
                for y in ylo..yhi {
                    let sy = (y as isize + dy) as usize;
                    let s = sy * w;
                    let d = y * w;
                    let sx0 = (xlo as isize + dx) as usize;
                    let len = xhi - xlo;
                    dst[d + xlo..d + xlo + len].copy_from_slice(&src[s + sx0..s + sx0 + len]);
                }
                row += 1;
            }
        }
    }
}

fn col2im_add<T: Scalar>(g: &ConvGeometry, col: &[T], sample: &mut [T]) {
    let (h, w, plane) = (g.height, g.width, g.plane());
    let (oy, ox) = g.origin();
    let mut row = 0;
    for ic in 0..g.in_channels {
        let dst = &mut sample[ic * plane..(ic + 1) * plane];
        for ky in 0..g.kernel_h {
            let dy = oy + (ky * g.dilation) as isize;
            let (ylo, yhi) = ConvGeometry::valid_range(h, dy);
            for kx in 0..g.kernel_w {
                let dx = ox + (kx * g.dilation) as isize;
                let (xlo, xhi) = ConvGeometry::valid_range(w, dx);
                let src = &col[row * plane..(row + 1) * plane];
                if xlo == xhi {
                    row += 1;
                    continue;
                }
                for y in ylo..yhi {
                    let sy = (y as isize + dy) as usize;
                    let sx0 = (xlo as isize + dx) as usize;
                    let len = xhi - xlo;
                    let d = &mut dst[sy * w + sx0..sy * w + sx0 + len];
                    let s = &src[y * w + xlo..y * w + xlo + len];
                    for (a, &b) in d.iter_mut().zip(s) {
                        *a = *a + b;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Forward pass: returns the N×Co×H×W output buffer.
pub fn forward<T: Scalar>(g: &ConvGeometry, input: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let plane = g.plane();
    let in_sample = g.in_channels * plane;
    let out_sample = g.out_channels * plane;
    let mut out = vec![T::zero(); g.batch * out_sample];
    exec::for_each_chunk_mut(&mut out, out_sample.max(1), |n, dst| {
        for (oc, row) in dst.chunks_mut(plane).enumerate() {
            row.fill(bias[oc]);
        }
        let sample = &input[n * in_sample..(n + 1) * in_sample];
        if g.is_pointwise() {
            T::gemm(g.out_channels, g.in_channels, plane, weight, false, sample, false, dst, true);
        } else {
            let mut col = vec![T::zero(); g.patch() * plane];
            im2col(g, sample, &mut col);
            T::gemm(g.out_channels, g.patch(), plane, weight, false, &col, false, dst, true);
        }
    });
    out
}

/// Gradients of a convolution with respect to its three operands.
pub struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

/// Backward pass for upstream gradient `grad_out` (N×Co×H×W). Only the
/// requested gradients are computed.
pub fn backward<T: Scalar>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    need_input: bool,
    need_params: bool,
) -> ConvGrads<T> {
    let plane = g.plane();
    let in_sample = g.in_channels * plane;
    let out_sample = g.out_channels * plane;
    let wlen = g.out_channels * g.patch();

    let grad_input = need_input.then(|| {
        let mut gin = vec![T::zero(); g.batch * in_sample];
        exec::for_each_chunk_mut(&mut gin, in_sample.max(1), |n, dst| {
            let go = &grad_out[n * out_sample..(n + 1) * out_sample];
            if g.is_pointwise() {
                T::gemm(g.in_channels, g.out_channels, plane, weight, true, go, false, dst, false);
            } else {
                let mut gcol = vec![T::zero(); g.patch() * plane];
                T::gemm(g.patch(), g.out_channels, plane, weight, true, go, false, &mut gcol, false);
                col2im_add(g, &gcol, dst);
            }
        });
        gin
    });

    if !need_params {
        return ConvGrads {
            input: grad_input,
            weight: None,
            bias: None,
        };
    }

    let per_sample: Vec<(Vec<T>, Vec<T>)> = exec::map_indices(g.batch, |n| {
        let go = &grad_out[n * out_sample..(n + 1) * out_sample];
        let sample = &input[n * in_sample..(n + 1) * in_sample];
        let mut gw = vec![T::zero(); wlen];
        if g.is_pointwise() {
            T::gemm(g.out_channels, plane, g.in_channels, go, false, sample, true, &mut gw, false);
        } else {
            let mut col = vec![T::zero(); g.patch() * plane];
            im2col(g, sample, &mut col);
            T::gemm(g.out_channels, plane, g.patch(), go, false, &col, true, &mut gw, false);
        }
        let gb = go
            .chunks(plane)
            .map(|row| row.iter().fold(T::zero(), |acc, &v| acc + v))
            .collect();
        (gw, gb)
    });

    let mut weight_grad = vec![T::zero(); wlen];
    let mut bias_grad = vec![T::zero(); g.out_channels];
    for (gw, gb) in per_sample {
        weight_grad.iter_mut().zip(gw).for_each(|(a, b)| *a = *a + b);
        bias_grad.iter_mut().zip(gb).for_each(|(a, b)| *a = *a + b);
    }

    ConvGrads {
        input: grad_input,
        weight: Some(weight_grad),
        bias: Some(bias_grad),
    }
}
