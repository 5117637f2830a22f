//! Portable float map (`PF` colour / `Pf` gray) reader and writer.
//!
//! Rows are stored bottom-to-top in the file; [`PfmData::data`] is top-to-bottom.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PfmData {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_whitespace(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn token(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.skip_whitespace();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, format!("missing {what}")));
        }
        let tok = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::parse(start, format!("non-ASCII {what}")))?;
        Ok((start, tok))
    }
}

pub fn decode(bytes: &[u8]) -> Result<PfmData> {
    if bytes.is_empty() {
        return Err(Error::parse(0, "empty PFM file"));
    }
    let mut cur = Cursor { bytes, pos: 0 };
    let (off, magic) = cur.token("magic")?;
    let channels = match magic {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::parse(off, format!("bad PFM magic {other:?}"))),
    };
    let mut dim = |what: &str| -> Result<usize> {
        let (off, tok) = cur.token(what)?;
        let v: i64 = tok
            .parse()
            .map_err(|_| Error::parse(off, format!("bad {what} {tok:?}")))?;
        if v <= 0 {
            return Err(Error::parse(off, format!("non-positive {what} {v}")));
        }
        Ok(v as usize)
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let (off, tok) = cur.token("scale")?;
    let scale: f32 = tok
        .parse()
        .map_err(|_| Error::parse(off, format!("bad scale {tok:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::parse(off, format!("invalid scale {scale}")));
    }
    let little = scale < 0.0;
    // Exactly one whitespace byte separates the header from the raster.
    if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
        return Err(Error::parse(cur.pos, "missing header terminator"));
    }
    let start = cur.pos + 1;
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::parse(off, "dimensions overflow"))?;
    let need = count * 4;
    let avail = bytes.len() - start;
    if avail < need {
        return Err(Error::parse(
            bytes.len(),
            format!("truncated payload: need {need} bytes, have {avail}"),
        ));
    }
    let row_len = width * channels;
    let mut data = vec![0f32; count];
    for (i, chunk) in bytes[start..start + need].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let file_row = i / row_len;
        let col = i % row_len;
        data[(height - 1 - file_row) * row_len + col] = v;
    }
    Ok(PfmData {
        width,
        height,
        channels,
        data,
    })
}

/// Little-endian encoding (scale `-1.0`).
pub fn encode(pfm: &PfmData) -> Result<Vec<u8>> {
    let magic = match pfm.channels {
        1 => "Pf",
        3 => "PF",
        c => {
            return Err(Error::Shape(format!(
                "PFM supports 1 or 3 channels, got {c}"
            )))
        }
    };
    if pfm.data.len() != pfm.width * pfm.height * pfm.channels {
        return Err(Error::Shape("PFM payload length mismatch".into()));
    }
    let mut out = format!("{magic}\n{} {}\n-1.0\n", pfm.width, pfm.height).into_bytes();
    out.reserve(pfm.data.len() * 4);
    let row_len = pfm.width * pfm.channels;
    for row in pfm.data.chunks_exact(row_len).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<PfmData> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write(pfm: &PfmData, path: &Path) -> Result<()> {
    let bytes = encode(pfm)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}
