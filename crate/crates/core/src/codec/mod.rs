//! Readers and writers for the image containers the pipeline touches:
//! binary PPM for LDR, Radiance RGBE and PFM for HDR.
//!
//! All readers return a structured [`Error`] on malformed input; none panic.

mod header;
pub mod pfm;
pub mod ppm;
pub mod rgbe;

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{HdrImage, LdrImage};

pub use pfm::{read_pfm, write_pfm};
pub use ppm::{read_ppm, write_ppm};
pub(crate) use ppm::quantize as quantize_unit;
pub use rgbe::{read_rgbe, write_rgbe};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HdrFormat {
    Rgbe,
    Pfm,
}

impl HdrFormat {
    /// Picks the container from a file extension (`.hdr`/`.pic` or `.pfm`).
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("hdr" | "pic" | "rgbe") => Ok(HdrFormat::Rgbe),
            Some("pfm") => Ok(HdrFormat::Pfm),
            _ => Err(Error::Config(format!(
                "cannot infer HDR format of {}; use .hdr or .pfm",
                path.display()
            ))),
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_ldr(path: impl AsRef<Path>) -> Result<LdrImage> {
    read_ppm(&read_file(path.as_ref())?)
}

pub fn save_ldr(path: impl AsRef<Path>, img: &LdrImage) -> Result<()> {
    write_file(path.as_ref(), &write_ppm(img))
}

pub fn load_hdr(path: impl AsRef<Path>) -> Result<HdrImage> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    match HdrFormat::from_path(path)? {
        HdrFormat::Rgbe => read_rgbe(&bytes),
        HdrFormat::Pfm => read_pfm(&bytes),
    }
}

pub fn save_hdr(path: impl AsRef<Path>, img: &HdrImage) -> Result<()> {
    let path = path.as_ref();
    let bytes = match HdrFormat::from_path(path)? {
        HdrFormat::Rgbe => write_rgbe(img),
        HdrFormat::Pfm => write_pfm(img),
    };
    write_file(path, &bytes)
}
