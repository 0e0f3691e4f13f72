use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Binary PGM (P5) bytes of an 8-bit image.
pub fn pgm_bytes(pixels: &[u8], height: usize, width: usize) -> Result<Vec<u8>> {
    if pixels.len() != height * width {
        return Err(Error::Malformed(format!("{} pixels for {height}x{width}", pixels.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

/// Min-max scaling of arbitrary values to `0..=255`; a constant input
/// maps to 0.
pub fn normalize_to_u8(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| if span > 0.0 { ((v - lo) / span * 255.0).round() as u8 } else { 0 })
        .collect()
}

pub fn write_pgm(path: &Path, pixels: &[u8], height: usize, width: usize) -> Result<()> {
    fs::write(path, pgm_bytes(pixels, height, width)?)?;
    Ok(())
}
