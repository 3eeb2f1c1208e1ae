//! Regenerates `fixtures/perceptual_extractor.ahpx`.

use fbhdr::losses::{ExtractorSpec, PerceptualExtractor, EXTRACTOR_SEED};

fn main() -> fbhdr::Result<()> {
    let ex = PerceptualExtractor::seeded(ExtractorSpec::standard(), EXTRACTOR_SEED)?;
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/perceptual_extractor.ahpx");
    std::fs::write(path, ex.to_bytes()).map_err(|e| fbhdr::Error::Io {
        path: path.into(),
        source: e,
    })?;
    println!("wrote {path}");
    Ok(())
}
