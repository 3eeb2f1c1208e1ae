//! Radiance RGBE (`.hdr`) images.
//!
//! Mantissa convention: a record `(r, g, b, e)` with `e > 0` decodes to
//! `component · 2^(e − 136)`, i.e. `component / 256 · 2^(e − 128)`, with no
//! half-unit offset. `e == 0` is black. The encoder picks `e` so the largest
//! component's mantissa lands in `[128, 256)` and truncates every
//! component, which makes it the exact inverse of the decoder up to
//! mantissa quantization: the absolute error of every component is below
//! `2^(e − 136) <= max / 128`.
//!
//! Only the standard `-Y <h> +X <w>` orientation is accepted. Scanlines may
//! be flat (optionally with old-style `1 1 1 n` repeat records) or
//! adaptive run-length encoded; the writer emits adaptive RLE for widths
//! `8..=32767` and flat scanlines otherwise.

use crate::error::{Error, Result};
use crate::image::HdrImage;

const FORMAT: &str = "RGBE";
const RLE_MIN_WIDTH: usize = 8;
const RLE_MAX_WIDTH: usize = 0x7fff;
const MIN_RUN: usize = 4;

/// Splits a finite `v > 0` into `(m, e)` with `v = m · 2^e`, `m ∈ [0.5, 1)`.
fn frexp(v: f64) -> (f64, i32) {
    debug_assert!(v > 0.0 && v.is_finite());
    let bits = v.to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i32;
    if biased == 0 {
        // subnormal: renormalize
        let (m, e) = frexp(v * 2f64.powi(64));
        return (m, e - 64);
    }
    let e = biased - 1022;
    let m = f64::from_bits((bits & !(0x7ff << 52)) | (1022 << 52));
    (m, e)
}

/// Encodes one linear RGB triple.
pub fn encode_pixel(rgb: [f32; 3]) -> [u8; 4] {
    let max = rgb.iter().copied().fold(0.0f32, f32::max) as f64;
    if !(max > 0.0) {
        return [0; 4];
    }
    let (_, mut e) = frexp(max);
    if e + 128 < 1 {
        return [0; 4];
    }
    if e + 128 > 255 {
        e = 127;
    }
    let scale = 2f64.powi(8 - e);
    let q = |c: f32| ((c.max(0.0) as f64) * scale).floor().min(255.0) as u8;
    [q(rgb[0]), q(rgb[1]), q(rgb[2]), (e + 128) as u8]
}

/// Decodes one RGBE record.
pub fn decode_pixel(rgbe: [u8; 4]) -> [f32; 3] {
    if rgbe[3] == 0 {
        return [0.0; 3];
    }
    let f = 2f64.powi(rgbe[3] as i32 - 136);
    [
        (rgbe[0] as f64 * f) as f32,
        (rgbe[1] as f64 * f) as f32,
        (rgbe[2] as f64 * f) as f32,
    ]
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let end = self.bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| start + i)
            .ok_or_else(|| Error::format(FORMAT, start, "unterminated header line"))?;
        self.pos = end + 1;
        let text = std::str::from_utf8(&self.bytes[start..end])
            .map_err(|_| Error::format(FORMAT, start, "non-UTF-8 header line"))?;
        Ok((start, text.trim_end_matches('\r')))
    }

    fn byte(&mut self) -> Result<u8> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| Error::format(FORMAT, self.pos, "truncated pixel data"))?;
        self.pos += 1;
        Ok(b)
    }

    fn quad(&mut self) -> Result<[u8; 4]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| Error::format(FORMAT, self.pos, "truncated pixel data"))?;
        self.pos += 4;
        Ok([s[0], s[1], s[2], s[3]])
    }
}

fn parse_resolution(at: usize, line: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    match parts[..] {
        ["-Y", h, "+X", w] => {
            let parse = |s: &str| {
                s.parse::<usize>()
                    .ok()
                    .filter(|&v| v > 0)
                    .ok_or_else(|| Error::format(FORMAT, at, format!("invalid extent {s:?}")))
            };
            Ok((parse(w)?, parse(h)?))
        }
        [a, _, b, _] if matches!(a, "-Y" | "+Y" | "-X" | "+X") && matches!(b, "-Y" | "+Y" | "-X" | "+X") => {
            Err(Error::format(
                FORMAT,
                at,
                format!("unsupported resolution orientation {line:?}, only \"-Y h +X w\""),
            ))
        }
        _ => Err(Error::format(FORMAT, at, format!("bad resolution line {line:?}"))),
    }
}

fn read_flat_scanline(r: &mut Reader, row: &mut [[u8; 4]], first: [u8; 4]) -> Result<()> {
    let width = row.len();
    let mut x = 0;
    let mut shift = 0;
    let mut next = Some(first);
    while x < width {
        let at = r.pos;
        let px = match next.take() {
            Some(p) => p,
            None => r.quad()?,
        };
        if px[0] == 1 && px[1] == 1 && px[2] == 1 {
            if x == 0 {
                return Err(Error::format(FORMAT, at, "repeat record with no previous pixel"));
            }
            let count = (px[3] as usize) << shift;
            if x + count > width {
                return Err(Error::format(FORMAT, at, "run overruns scanline"));
            }
            let prev = row[x - 1];
            row[x..x + count].fill(prev);
            x += count;
            shift += 8;
        } else {
            row[x] = px;
            x += 1;
            shift = 0;
        }
    }
    Ok(())
}

fn read_rle_scanline(r: &mut Reader, row: &mut [[u8; 4]]) -> Result<()> {
    let width = row.len();
    for ch in 0..4 {
        let mut x = 0;
        while x < width {
            let at = r.pos;
            let code = r.byte()? as usize;
            if code > 128 {
                let count = code - 128;
                if x + count > width {
                    return Err(Error::format(FORMAT, at, "run overruns scanline"));
                }
                let v = r.byte()?;
                row[x..x + count].iter_mut().for_each(|p| p[ch] = v);
                x += count;
            } else {
                if code == 0 || x + code > width {
                    return Err(Error::format(FORMAT, at, "literal count overruns scanline"));
                }
                for p in &mut row[x..x + code] {
                    p[ch] = r.byte()?;
                }
                x += code;
            }
        }
    }
    Ok(())
}

pub fn read_rgbe(bytes: &[u8]) -> Result<HdrImage> {
    let mut r = Reader { bytes, pos: 0 };
    let (_, magic) = r.line()?;
    if !(magic.starts_with("#?RADIANCE") || magic.starts_with("#?RGBE")) {
        return Err(Error::format(FORMAT, 0, format!("bad magic line {magic:?}")));
    }
    let mut format_seen = false;
    loop {
        let (at, line) = r.line()?;
        if line.is_empty() {
            break;
        }
        if let Some(fmt) = line.strip_prefix("FORMAT=") {
            if fmt != "32-bit_rle_rgbe" {
                return Err(Error::format(FORMAT, at, format!("unsupported pixel format {fmt:?}")));
            }
            format_seen = true;
        }
    }
    if !format_seen {
        return Err(Error::format(FORMAT, r.pos, "missing FORMAT=32-bit_rle_rgbe line"));
    }
    let (at, res) = r.line()?;
    let (width, height) = parse_resolution(at, res)?;
    if width.checked_mul(height).is_none_or(|n| n > bytes.len().saturating_mul(128)) {
        return Err(Error::format(FORMAT, at, "image extents implausible for file size"));
    }

    let mut row = vec![[0u8; 4]; width];
    let mut pixels = Vec::with_capacity(width * height * 3);
    for _ in 0..height {
        let first = r.quad()?;
        let rle = (RLE_MIN_WIDTH..=RLE_MAX_WIDTH).contains(&width)
            && first[0] == 2
            && first[1] == 2
            && first[2] & 0x80 == 0;
        if rle {
            let encoded = ((first[2] as usize) << 8) | first[3] as usize;
            if encoded != width {
                return Err(Error::format(
                    FORMAT,
                    r.pos - 4,
                    format!("scanline width {encoded} does not match image width {width}"),
                ));
            }
            read_rle_scanline(&mut r, &mut row)?;
        } else {
            read_flat_scanline(&mut r, &mut row, first)?;
        }
        for &px in &row {
            pixels.extend_from_slice(&decode_pixel(px));
        }
    }
    HdrImage::new(width, height, pixels)
}

fn write_rle_channel(data: &[u8], out: &mut Vec<u8>) {
    let run_at = |i: usize| {
        let v = data[i];
        data[i..].iter().take(127).take_while(|&&b| b == v).count()
    };
    let mut i = 0;
    while i < data.len() {
        let run = run_at(i);
        if run >= MIN_RUN {
            out.push(128 + run as u8);
            out.push(data[i]);
            i += run;
            continue;
        }
        let start = i;
        while i < data.len() && i - start < 128 && run_at(i) < MIN_RUN {
            i += 1;
        }
        out.push((i - start) as u8);
        out.extend_from_slice(&data[start..i]);
    }
}

pub fn write_rgbe(img: &HdrImage) -> Vec<u8> {
    let (w, h) = (img.width(), img.height());
    let mut out = format!("#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y {h} +X {w}\n").into_bytes();
    let rle = (RLE_MIN_WIDTH..=RLE_MAX_WIDTH).contains(&w);
    let mut channels = vec![Vec::with_capacity(w); 4];
    for y in 0..h {
        let records: Vec<[u8; 4]> = (0..w).map(|x| encode_pixel(img.pixel(x, y))).collect();
        if !rle {
            records.iter().for_each(|p| out.extend_from_slice(p));
            continue;
        }
        out.extend_from_slice(&[2, 2, (w >> 8) as u8, (w & 0xff) as u8]);
        for (ch, buf) in channels.iter_mut().enumerate() {
            buf.clear();
            buf.extend(records.iter().map(|p| p[ch]));
            write_rle_channel(buf, &mut out);
        }
    }
    out
}
