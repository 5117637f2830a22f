//! 8-bit display encoding.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::{DisplayRange, HdrImage};
use crate::error::{Error, Result};

pub const DISPLAY_GAMMA: f64 = 2.2;

/// Code value for a display luminance already clamped to the range.
#[inline]
pub fn code_value(v: f64, display: &DisplayRange) -> u8 {
    let unit = ((v - display.i_min) / display.span()).clamp(0.0, 1.0);
    (255.0 * unit.powf(1.0 / DISPLAY_GAMMA)).round() as u8
}

/// Returns the 8-bit codes and the number of samples clamped into range.
pub fn ldr_codes(img: &HdrImage, display: &DisplayRange) -> (Vec<u8>, usize) {
    let mut clamped = 0;
    let codes = img
        .data()
        .iter()
        .map(|&v| {
            let v = v as f64;
            if !display.contains(v) {
                clamped += 1;
            }
            code_value(v.clamp(display.i_min, display.i_max), display)
        })
        .collect();
    (codes, clamped)
}

/// Writes an 8-bit gray or RGB PNG of display luminances.
pub fn encode_ldr(img: &HdrImage, display: &DisplayRange, path: &Path) -> Result<()> {
    let (codes, clamped) = ldr_codes(img, display);
    if clamped > 0 {
        log::warn!(
            "{clamped} samples outside [{}, {}] cd/m² clamped before encoding",
            display.i_min,
            display.i_max
        );
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(
        BufWriter::new(file),
        img.width() as u32,
        img.height() as u32,
    );
    enc.set_color(if img.channels() == 3 {
        png::ColorType::Rgb
    } else {
        png::ColorType::Grayscale
    });
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::Other(format!("PNG encoding failed: {e}"));
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&codes).map_err(png_err)?;
    writer.finish().map_err(png_err)
}
