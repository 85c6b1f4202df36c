use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::metrics::PixelFrame;

/// Binary greyscale PGM (`P5`, maxval 255), pixel = `round(v * 255)`.
pub fn encode_pgm(frame: &PixelFrame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend(frame.data().iter().map(|&v| (v * 255.0).round() as u8));
    out
}

/// Writes the frame and returns the number of bytes written.
pub fn export_pgm(frame: &PixelFrame, path: impl AsRef<Path>) -> Result<usize> {
    let bytes = encode_pgm(frame);
    fs::write(path, &bytes)?;
    Ok(bytes.len())
}
