//! HDR radiance maps: file I/O, luminance, calibration and colour handling.

pub mod ldr;
pub mod pfm;
pub mod rgbe;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::Plane;

pub use ldr::{encode_ldr, ldr_codes};

/// Rec.709 luminance weights for linear RGB.
pub const REC709: [f64; 3] = [0.2126, 0.7152, 0.0722];

pub const DEFAULT_SATURATION: f64 = 0.6;

/// Linear-light image, 1 or 3 interleaved channels, rows top-to-bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct HdrImage {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
    calibrated: bool,
}

impl HdrImage {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f32>,
        calibrated: bool,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{width}x{height}x{channels} image needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain(format!(
                "pixel values must be finite and non-negative, found {v}"
            )));
        }
        Ok(HdrImage {
            width,
            height,
            channels,
            data,
            calibrated,
        })
    }

    /// Single-channel image from a plane (values rounded to `f32`).
    pub fn from_plane(plane: &Plane, calibrated: bool) -> Result<Self> {
        Self::new(
            plane.width(),
            plane.height(),
            1,
            plane.data().iter().map(|&v| v as f32).collect(),
            calibrated,
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibrated
    }

    /// Channel `c` as an `f64` plane.
    pub fn channel_plane(&self, c: usize) -> Plane {
        assert!(c < self.channels);
        let data = self
            .data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .map(|&v| v as f64)
            .collect();
        Plane::new(self.width, self.height, data).expect("valid image dims")
    }

    /// Luminance as an `f64` plane.
    pub fn luminance_plane(&self) -> Plane {
        if self.channels == 1 {
            return self.channel_plane(0);
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| REC709[0] * p[0] as f64 + REC709[1] * p[1] as f64 + REC709[2] * p[2] as f64)
            .collect();
        Plane::new(self.width, self.height, data).expect("valid image dims")
    }

    pub fn to_pfm(&self) -> pfm::PfmData {
        pfm::PfmData {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.clone(),
        }
    }

    /// Bilinear resize (pixel-centre aligned).
    pub fn resize(&self, width: usize, height: usize) -> Result<HdrImage> {
        if width == 0 || height == 0 {
            return Err(Error::Shape("resize target must be non-empty".into()));
        }
        if (width, height) == (self.width, self.height) {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let coord = |d: usize, scale: f64, n: usize| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, s - i0 as f64)
        };
        let c = self.channels;
        let mut out = Vec::with_capacity(width * height * c);
        for y in 0..height {
            let (y0, y1, fy) = coord(y, sy, self.height);
            for x in 0..width {
                let (x0, x1, fx) = coord(x, sx, self.width);
                for ch in 0..c {
                    let at =
                        |xx: usize, yy: usize| self.data[(yy * self.width + xx) * c + ch] as f64;
                    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                    let bot = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                    out.push((top * (1.0 - fy) + bot * fy) as f32);
                }
            }
        }
        HdrImage::new(width, height, c, out, self.calibrated)
    }

    /// Resize so the shorter side equals `short`; `0` leaves the image untouched.
    pub fn resize_short_side(&self, short: usize) -> Result<HdrImage> {
        if short == 0 {
            return Ok(self.clone());
        }
        let (w, h) = (self.width as f64, self.height as f64);
        let s = short as f64 / w.min(h);
        let nw = ((w * s).round() as usize).max(1);
        let nh = ((h * s).round() as usize).max(1);
        self.resize(nw, nh)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRange {
    pub s_min: f64,
    pub s_max: f64,
}

impl CalibrationRange {
    pub fn new(s_min: f64, s_max: f64) -> Result<Self> {
        if !(s_min.is_finite() && s_max.is_finite() && s_min >= 0.0 && s_max > s_min) {
            return Err(Error::InvalidParam(format!(
                "calibration range needs 0 <= s_min < s_max, got ({s_min}, {s_max})"
            )));
        }
        Ok(CalibrationRange { s_min, s_max })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplayRange {
    pub i_min: f64,
    pub i_max: f64,
}

impl Default for DisplayRange {
    fn default() -> Self {
        DisplayRange {
            i_min: 5.0,
            i_max: 300.0,
        }
    }
}

impl DisplayRange {
    pub fn new(i_min: f64, i_max: f64) -> Result<Self> {
        if !(i_min.is_finite() && i_max.is_finite() && i_min > 0.0 && i_max > i_min) {
            return Err(Error::InvalidParam(format!(
                "display range needs 0 < i_min < i_max, got ({i_min}, {i_max})"
            )));
        }
        Ok(DisplayRange { i_min, i_max })
    }

    pub fn span(&self) -> f64 {
        self.i_max - self.i_min
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.i_min && v <= self.i_max
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImageFormat {
    Pfm,
    Rgbe,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("pfm") => Ok(ImageFormat::Pfm),
            Some("hdr") | Some("rgbe") | Some("pic") => Ok(ImageFormat::Rgbe),
            _ => Err(Error::InvalidParam(format!(
                "cannot infer HDR format of {}",
                path.display()
            ))),
        }
    }
}

/// Loads an uncalibrated HDR image.
pub fn load_image(path: &Path, format: ImageFormat) -> Result<HdrImage> {
    match format {
        ImageFormat::Pfm => {
            let p = pfm::read(path)?;
            HdrImage::new(p.width, p.height, p.channels, p.data, false)
        }
        ImageFormat::Rgbe => {
            let (w, h, rgb) = rgbe::read(path)?;
            HdrImage::new(w, h, 3, rgb, false)
        }
    }
}

pub fn load_image_auto(path: &Path) -> Result<HdrImage> {
    load_image(path, ImageFormat::from_path(path)?)
}

pub fn save_pfm(img: &HdrImage, path: &Path) -> Result<()> {
    pfm::write(&img.to_pfm(), path)
}

/// Rec.709 luminance; identity for single-channel input.
pub fn luminance(img: &HdrImage) -> HdrImage {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| {
            (REC709[0] * p[0] as f64 + REC709[1] * p[1] as f64 + REC709[2] * p[2] as f64) as f32
        })
        .collect();
    HdrImage {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
        calibrated: img.calibrated,
    }
}

/// Affine map of `[R_min, R_max]` onto `[s_min, s_max]` in `f64`.
pub fn calibrate_plane(plane: &Plane, range: &CalibrationRange) -> Result<Plane> {
    let (lo, hi) = (plane.min(), plane.max());
    if !(hi > lo) {
        return Err(Error::Degenerate(format!(
            "calibration needs two distinct values, image is constant {lo}"
        )));
    }
    let span = range.s_max - range.s_min;
    Ok(plane.map(|r| {
        let unit = (r - lo) / (hi - lo);
        span * unit + range.s_min
    }))
}

/// Maps the image's observed `[R_min, R_max]` (over all channels) onto the range.
pub fn calibrate(img: &HdrImage, range: &CalibrationRange) -> Result<HdrImage> {
    let lo = img.data.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = img.data.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    if !(hi > lo) {
        return Err(Error::Degenerate(format!(
            "calibration needs two distinct values, image is constant {lo}"
        )));
    }
    let span = range.s_max - range.s_min;
    let data = img
        .data
        .iter()
        .map(|&r| (span * ((r as f64 - lo) / (hi - lo)) + range.s_min) as f32)
        .collect();
    HdrImage::new(img.width, img.height, img.channels, data, true)
}

/// `C_out = (C_in / Y_in)^saturation · Y_out` per channel.
///
/// Pixels with zero input luminance are emitted as gray at `Y_out`.
pub fn reattach_color(
    hdr_rgb: &HdrImage,
    y_in: &Plane,
    y_out: &Plane,
    saturation: f64,
) -> Result<HdrImage> {
    let dims = (hdr_rgb.width, hdr_rgb.height);
    if y_in.dims() != dims || y_out.dims() != dims {
        return Err(Error::Shape(format!(
            "colour reattachment needs equal sizes: rgb {:?}, y_in {:?}, y_out {:?}",
            dims,
            y_in.dims(),
            y_out.dims()
        )));
    }
    let c = hdr_rgb.channels;
    let mut data = Vec::with_capacity(hdr_rgb.data.len());
    for (i, px) in hdr_rgb.data.chunks_exact(c).enumerate() {
        let yi = y_in.data()[i];
        let yo = y_out.data()[i];
        for &ch in px {
            let v = if yi > 0.0 {
                (ch as f64 / yi).powf(saturation) * yo
            } else {
                yo
            };
            data.push(v as f32);
        }
    }
    HdrImage::new(dims.0, dims.1, c, data, true)
}
