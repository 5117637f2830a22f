//! Laplacian pyramid and the normalized Laplacian pyramid front end.
//!
//! The forward chain for a luminance plane `S` is
//!
//! ```text
//! x1 = S^gamma
//! x(i+1) = down(x(i))                    lowpass then decimate
//! z(i)   = x(i) - up(x(i+1))             bandpass residual
//! z(m)   = x(m)                          lowpass
//! y(i)   = z(i) / (P * |z(i)| + c)       divisive normalization
//! ```
//!
//! with `P` a separable 5-tap filter for the bandpass levels and the identity
//! for the lowpass level.

pub mod dump;
pub mod filter;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::Plane;
pub use filter::{downsample, half, reflect, upsample, Taps};

/// Burt–Adelson style 5-tap binomial-like kernel.
pub const DEFAULT_TAPS: Taps = [0.05, 0.25, 0.4, 0.25, 0.05];

/// Deepest pyramid accepted by [`build_laplacian`].
pub const MAX_LEVELS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PyramidParams {
    pub gamma: f64,
    pub levels: usize,
    pub lowpass_taps: Taps,
    pub norm_taps: Taps,
    pub c_bandpass: f64,
    pub c_lowpass: f64,
}

impl Default for PyramidParams {
    fn default() -> Self {
        PyramidParams {
            gamma: 1.0 / 2.6,
            levels: 5,
            lowpass_taps: DEFAULT_TAPS,
            norm_taps: DEFAULT_TAPS,
            c_bandpass: 0.17,
            c_lowpass: 4.86,
        }
    }
}

impl PyramidParams {
    pub fn with_levels(levels: usize) -> Self {
        PyramidParams {
            levels,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, taps) in [("lowpass", &self.lowpass_taps), ("norm", &self.norm_taps)] {
            let sum: f64 = taps.iter().sum();
            if (sum - 1.0).abs() > 1e-12 || taps.iter().any(|t| *t < 0.0) {
                return Err(Error::InvalidParam(format!(
                    "{name} taps must be non-negative and sum to 1, got {taps:?}"
                )));
            }
        }
        if !(self.gamma > 0.0 && self.c_bandpass > 0.0 && self.c_lowpass > 0.0) {
            return Err(Error::InvalidParam(
                "gamma and normalization constants must be positive".into(),
            ));
        }
        check_levels(self.levels)
    }
}

fn check_levels(levels: usize) -> Result<()> {
    if levels == 0 || levels > MAX_LEVELS {
        return Err(Error::InvalidParam(format!(
            "pyramid levels must be in 1..={MAX_LEVELS}, got {levels}"
        )));
    }
    Ok(())
}

/// `m-1` bandpass residuals (finest first) and the lowpass residual.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianPyramid {
    pub bandpass: Vec<Plane>,
    pub lowpass: Plane,
}

impl LaplacianPyramid {
    pub fn levels(&self) -> usize {
        self.bandpass.len() + 1
    }

    /// All `m` planes, finest first.
    pub fn planes(&self) -> impl Iterator<Item = &Plane> {
        self.bandpass.iter().chain(std::iter::once(&self.lowpass))
    }
}

/// Divisively normalized coefficients, one plane per level, finest first.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedPyramid {
    pub planes: Vec<Plane>,
}

impl NormalizedPyramid {
    pub fn levels(&self) -> usize {
        self.planes.len()
    }

    pub fn bandpass(&self) -> &[Plane] {
        &self.planes[..self.planes.len() - 1]
    }

    pub fn lowpass(&self) -> &Plane {
        self.planes.last().expect("at least one level")
    }
}

/// Plane dims for each level of an `m`-level pyramid over `width × height`.
pub fn level_dims(width: usize, height: usize, levels: usize) -> Vec<(usize, usize)> {
    let mut dims = Vec::with_capacity(levels);
    let (mut w, mut h) = (width, height);
    for _ in 0..levels {
        dims.push((w, h));
        w = half(w);
        h = half(h);
    }
    dims
}

/// Photoreceptor-like power nonlinearity `S^gamma`.
pub fn front_end(luminance: &Plane, gamma: f64) -> Result<Plane> {
    if let Some(v) = luminance.data().iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Domain(format!(
            "front end needs strictly positive luminance, found {v}"
        )));
    }
    Ok(luminance.map(|v| v.powf(gamma)))
}

pub fn build_laplacian(x1: &Plane, levels: usize, taps: &Taps) -> Result<LaplacianPyramid> {
    check_levels(levels)?;
    let mut bandpass = Vec::with_capacity(levels - 1);
    let mut current = x1.clone();
    for _ in 1..levels {
        let next = downsample(&current, taps);
        let predicted = upsample(&next, taps, current.width(), current.height())?;
        bandpass.push(current.zip_map(&predicted, |a, b| a - b)?);
        current = next;
    }
    Ok(LaplacianPyramid {
        bandpass,
        lowpass: current,
    })
}

/// Inverse of [`build_laplacian`]: `x(i) = z(i) + up(x(i+1))`.
pub fn collapse_laplacian(pyr: &LaplacianPyramid, taps: &Taps) -> Result<Plane> {
    let mut current = pyr.lowpass.clone();
    for z in pyr.bandpass.iter().rev() {
        let up = upsample(&current, taps, z.width(), z.height())?;
        current = z.zip_map(&up, |a, b| a + b)?;
    }
    Ok(current)
}

/// Local divisor `P * |z| + c` for a bandpass plane.
pub fn bandpass_divisor(z: &Plane, params: &PyramidParams) -> Plane {
    let c = params.c_bandpass;
    filter::filter_separable(&z.map(f64::abs), &params.norm_taps).map(|v| v + c)
}

pub fn normalize(pyr: &LaplacianPyramid, params: &PyramidParams) -> NormalizedPyramid {
    let mut planes = Vec::with_capacity(pyr.levels());
    for z in &pyr.bandpass {
        let div = bandpass_divisor(z, params);
        planes.push(z.zip_map(&div, |a, d| a / d).expect("same dims"));
    }
    let c = params.c_lowpass;
    planes.push(pyr.lowpass.map(|v| v / (v.abs() + c)));
    NormalizedPyramid { planes }
}

/// Front end, Laplacian decomposition and normalization in one call.
pub fn analyze(luminance: &Plane, params: &PyramidParams) -> Result<NormalizedPyramid> {
    params.validate()?;
    let x1 = front_end(luminance, params.gamma)?;
    let lap = build_laplacian(&x1, params.levels, &params.lowpass_taps)?;
    Ok(normalize(&lap, params))
}
