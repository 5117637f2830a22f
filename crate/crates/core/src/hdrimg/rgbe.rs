//! Radiance RGBE (`.hdr`) reader: flat and new-style RLE scanlines.

use std::path::Path;

use crate::error::{Error, Result};

/// Shared-exponent decode: `mantissa · 2^(exponent − 136)`, zero exponent is black.
#[inline]
pub fn rgbe_to_rgb(px: [u8; 4]) -> [f32; 3] {
    if px[3] == 0 {
        return [0.0; 3];
    }
    let f = 2f64.powi(px[3] as i32 - 136);
    [
        (px[0] as f64 * f) as f32,
        (px[1] as f64 * f) as f32,
        (px[2] as f64 * f) as f32,
    ]
}

fn read_line(bytes: &[u8], pos: &mut usize) -> Result<(usize, String)> {
    let start = *pos;
    let end = bytes[start..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|i| start + i)
        .ok_or_else(|| Error::parse(start, "unterminated header line"))?;
    *pos = end + 1;
    let line = String::from_utf8_lossy(&bytes[start..end])
        .trim_end_matches('\r')
        .to_string();
    Ok((start, line))
}

/// Decodes to `(width, height, rgb)` with rows top-to-bottom.
pub fn decode(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.is_empty() {
        return Err(Error::parse(0, "empty RGBE file"));
    }
    if !bytes.starts_with(b"#?") {
        return Err(Error::parse(0, "missing #? signature"));
    }
    let mut pos = 0;
    read_line(bytes, &mut pos)?;
    loop {
        if pos >= bytes.len() {
            return Err(Error::parse(pos, "header not terminated by blank line"));
        }
        let (off, line) = read_line(bytes, &mut pos)?;
        if line.is_empty() {
            break;
        }
        if let Some(fmt) = line.strip_prefix("FORMAT=") {
            if fmt != "32-bit_rle_rgbe" {
                return Err(Error::parse(off, format!("unsupported format {fmt}")));
            }
        }
    }
    let (off, res) = read_line(bytes, &mut pos)?;
    let parts: Vec<&str> = res.split_whitespace().collect();
    let (height, width) = match parts.as_slice() {
        ["-Y", h, "+X", w] => {
            let h: i64 = h
                .parse()
                .map_err(|_| Error::parse(off, format!("bad height in {res:?}")))?;
            let w: i64 = w
                .parse()
                .map_err(|_| Error::parse(off, format!("bad width in {res:?}")))?;
            if h <= 0 || w <= 0 {
                return Err(Error::parse(
                    off,
                    format!("non-positive dimensions in {res:?}"),
                ));
            }
            (h as usize, w as usize)
        }
        _ => {
            return Err(Error::parse(
                off,
                format!("unsupported resolution string {res:?}"),
            ))
        }
    };

    let mut rgb = Vec::with_capacity(width * height * 3);
    let mut scan = vec![[0u8; 4]; width];
    for _ in 0..height {
        decode_scanline(bytes, &mut pos, &mut scan)?;
        for px in &scan {
            rgb.extend_from_slice(&rgbe_to_rgb(*px));
        }
    }
    Ok((width, height, rgb))
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    if *pos + n > bytes.len() {
        return Err(Error::parse(bytes.len(), "truncated scanline data"));
    }
    let s = &bytes[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

fn decode_scanline(bytes: &[u8], pos: &mut usize, scan: &mut [[u8; 4]]) -> Result<()> {
    let width = scan.len();
    let is_rle = (8..0x8000).contains(&width)
        && bytes.len() >= *pos + 4
        && bytes[*pos] == 2
        && bytes[*pos + 1] == 2
        && bytes[*pos + 2] & 0x80 == 0;
    if !is_rle {
        for px in scan.iter_mut() {
            let b = take(bytes, pos, 4)?;
            *px = [b[0], b[1], b[2], b[3]];
        }
        return Ok(());
    }
    let start = *pos;
    let hdr = take(bytes, pos, 4)?;
    let declared = ((hdr[2] as usize) << 8) | hdr[3] as usize;
    if declared != width {
        return Err(Error::parse(
            start,
            format!("RLE scanline width {declared} != {width}"),
        ));
    }
    for comp in 0..4 {
        let mut x = 0;
        while x < width {
            let at = *pos;
            let count = take(bytes, pos, 1)?[0] as usize;
            if count > 128 {
                let run = count - 128;
                if x + run > width {
                    return Err(Error::parse(at, "RLE run overflows scanline"));
                }
                let v = take(bytes, pos, 1)?[0];
                for px in &mut scan[x..x + run] {
                    px[comp] = v;
                }
                x += run;
            } else {
                if count == 0 || x + count > width {
                    return Err(Error::parse(at, "bad RLE literal count"));
                }
                let lit = take(bytes, pos, count)?;
                for (px, &v) in scan[x..x + count].iter_mut().zip(lit) {
                    px[comp] = v;
                }
                x += count;
            }
        }
    }
    Ok(())
}

pub fn read(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
