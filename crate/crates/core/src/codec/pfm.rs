//! Portable float map (`PF`, 3-channel float32).
//!
//! A negative scale marks a little-endian payload, positive big-endian.
//! Rows are stored bottom-to-top. The writer always emits `-1.0`.

use crate::codec::header::HeaderCursor;
use crate::error::{Error, Result};
use crate::image::HdrImage;

const FORMAT: &str = "PFM";

pub fn read_pfm(bytes: &[u8]) -> Result<HdrImage> {
    let mut cur = HeaderCursor::new(FORMAT, bytes);
    match cur.token()? {
        "PF" => {}
        "Pf" => {
            return Err(Error::format(
                FORMAT,
                0,
                "grayscale \"Pf\" maps are unsupported, only 3-channel \"PF\"",
            ))
        }
        other => {
            return Err(Error::format(FORMAT, 0, format!("bad magic {other:?}")));
        }
    }
    let width = cur.positive_int("width")?;
    let height = cur.positive_int("height")?;
    cur.skip_space_and_comments();
    let scale_at = cur.offset();
    let scale = cur.float("scale")?;
    if scale == 0.0 {
        return Err(Error::format(FORMAT, scale_at, "scale must be non-zero"));
    }
    cur.single_whitespace()?;
    let little_endian = scale < 0.0;
    let start = cur.offset();
    let needed = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(12))
        .ok_or_else(|| Error::format(FORMAT, start, "image extents overflow"))?;
    let payload = bytes.get(start..start + needed).ok_or_else(|| {
        Error::format(
            FORMAT,
            bytes.len(),
            format!("truncated payload: need {needed} bytes from offset {start}"),
        )
    })?;

    let row_bytes = width * 12;
    let mut pixels = vec![0f32; width * height * 3];
    for (file_row, chunk) in payload.chunks_exact(row_bytes).enumerate() {
        let y = height - 1 - file_row;
        let dst = &mut pixels[y * width * 3..(y + 1) * width * 3];
        for (v, b) in dst.iter_mut().zip(chunk.chunks_exact(4)) {
            let raw = [b[0], b[1], b[2], b[3]];
            *v = if little_endian {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
        }
    }
    if let Some(i) = pixels.iter().position(|v| v.is_nan()) {
        return Err(Error::Validation(format!("NaN in PFM payload at component {i}")));
    }
    HdrImage::new(width, height, pixels)
}

pub fn write_pfm(img: &HdrImage) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    let mut out = format!("PF\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 12);
    for y in (0..h).rev() {
        for v in &img.pixels()[y * w * 3..(y + 1) * w * 3] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}
