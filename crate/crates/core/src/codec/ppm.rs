//! Binary 8-bit PPM (`P6`, maxval 255).

use crate::codec::header::HeaderCursor;
use crate::error::{Error, Result};
use crate::image::LdrImage;

const FORMAT: &str = "PPM";

/// Decodes a `P6` file; byte `v` becomes `v / 255`.
pub fn read_ppm(bytes: &[u8]) -> Result<LdrImage> {
    let mut cur = HeaderCursor::new(FORMAT, bytes);
    let magic = cur.token()?;
    if magic != "P6" {
        return Err(Error::format(FORMAT, 0, format!("bad magic {magic:?}, expected \"P6\"")));
    }
    let width = cur.positive_int("width")?;
    let height = cur.positive_int("height")?;
    cur.skip_space_and_comments();
    let maxval_at = cur.offset();
    let maxval = cur.positive_int("maxval")?;
    if maxval != 255 {
        return Err(Error::format(
            FORMAT,
            maxval_at,
            format!("maxval {maxval} unsupported, only 255"),
        ));
    }
    cur.single_whitespace()?;
    let start = cur.offset();
    let needed = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::format(FORMAT, start, "image extents overflow"))?;
    let payload = bytes.get(start..start + needed).ok_or_else(|| {
        Error::format(
            FORMAT,
            bytes.len(),
            format!("truncated payload: need {needed} bytes from offset {start}"),
        )
    })?;
    LdrImage::new(width, height, payload.iter().map(|&b| b as f32 / 255.0).collect())
}

/// Encodes as `P6\n<w> <h>\n255\n` followed by `round(v · 255)` bytes.
pub fn write_ppm(img: &LdrImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&v| quantize(v)));
    out
}

pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
