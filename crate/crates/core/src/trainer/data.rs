use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hdrimg::{self, calibrate_plane, CalibrationRange, HdrImage};
use crate::plane::Plane;
use crate::pyramid::reflect;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<PathBuf>,
    pub test: Vec<PathBuf>,
}

fn is_hdr(path: &Path) -> bool {
    hdrimg::ImageFormat::from_path(path).is_ok()
}

/// Lists PFM/RGBE files in `dir` (sorted), shuffles them with `seed` and
/// puts `round(split·n)` of them (at least one) in the training set.
pub fn make_dataset(dir: &Path, split: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&split) {
        return Err(Error::InvalidParam(format!("split {split} outside [0, 1]")));
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for e in entries {
        let path = e.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_hdr(&path) {
            files.push(path);
        }
    }
    if files.is_empty() {
        return Err(Error::Degenerate(format!("no HDR images in {}", dir.display())));
    }
    files.sort();
    files.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((split * files.len() as f64).round() as usize).clamp(1, files.len());
    let test = files.split_off(n_train);
    Ok(Dataset { train: files, test })
}

/// Uncalibrated luminance of each file, in order.
pub fn load_luminance(paths: &[PathBuf]) -> Result<Vec<Plane>> {
    paths
        .iter()
        .map(|p| Ok(hdrimg::load_image_auto(p)?.luminance_plane()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmaxSampling {
    LogUniform,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub crop: usize,
    pub s_min: f64,
    pub s_max_range: (f64, f64),
    pub sampling: SmaxSampling,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop: 256,
            s_min: 0.05,
            s_max_range: (1e3, 1e5),
            sampling: SmaxSampling::LogUniform,
        }
    }
}

pub fn sample_smax(cfg: &AugmentConfig, rng: &mut impl Rng) -> f64 {
    let (lo, hi) = cfg.s_max_range;
    if hi <= lo {
        return lo;
    }
    match cfg.sampling {
        SmaxSampling::LogUniform => (rng.random_range(lo.ln()..hi.ln())).exp().clamp(lo, hi),
        SmaxSampling::Uniform => rng.random_range(lo..hi),
    }
}

/// `crop × crop` window at `(x0, y0)`; coordinates past the border reflect.
pub fn crop_reflect(p: &Plane, x0: usize, y0: usize, crop: usize) -> Plane {
    let (w, h) = p.dims();
    Plane::from_fn(crop, crop, |x, y| {
        p.get(reflect((x0 + x) as isize, w), reflect((y0 + y) as isize, h))
    })
}

/// Random crop (reflect-padded when the image is smaller), horizontal flip
/// with probability 1/2, then calibration to `[s_min, s_max]` with a freshly
/// sampled `s_max`. Returns the calibrated crop and the `s_max` used.
pub fn augment(lum: &Plane, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<(Plane, f64)> {
    if cfg.crop == 0 {
        return Err(Error::InvalidParam("crop size must be positive".into()));
    }
    let (w, h) = lum.dims();
    let x0 = rng.random_range(0..=w.saturating_sub(cfg.crop));
    let y0 = rng.random_range(0..=h.saturating_sub(cfg.crop));
    let mut c = crop_reflect(lum, x0, y0, cfg.crop);
    if rng.random_bool(0.5) {
        c = c.flip_horizontal();
    }
    let s_max = sample_smax(cfg, rng);
    let cal = calibrate_plane(&c, &CalibrationRange::new(cfg.s_min, s_max)?)?;
    Ok((cal, s_max))
}

/// Bilinear interpolation of a random `n × n` lattice.
fn value_noise(w: usize, h: usize, n: usize, rng: &mut ChaCha8Rng) -> Plane {
    let lattice: Vec<f64> = (0..(n + 1) * (n + 1)).map(|_| rng.random::<f64>()).collect();
    Plane::from_fn(w, h, |x, y| {
        let fx = x as f64 / w as f64 * n as f64;
        let fy = y as f64 / h as f64 * n as f64;
        let (ix, iy) = (fx as usize, fy as usize);
        let (tx, ty) = (fx - ix as f64, fy - iy as f64);
        let at = |i: usize, j: usize| lattice[j * (n + 1) + i];
        (1.0 - ty) * ((1.0 - tx) * at(ix, iy) + tx * at(ix + 1, iy))
            + ty * ((1.0 - tx) * at(ix, iy + 1) + tx * at(ix + 1, iy + 1))
    })
}

/// Procedural HDR luminance: a log-domain ramp, a few bright sources, a
/// hard-edged shadow region and multi-octave texture, stretched so that the
/// image spans between three and five decades.
pub fn synthetic_scene(w: usize, h: usize, seed: u64) -> Plane {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decades = rng.random_range(3.0..5.0);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let blobs: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.random::<f64>(), rng.random::<f64>(), rng.random_range(0.03..0.12)))
        .collect();
    let shadow = (
        rng.random_range(0.0..0.5),
        rng.random_range(0.0..0.5),
        rng.random_range(0.3..0.5),
    );
    let coarse = value_noise(w, h, 4, &mut rng);
    let fine = value_noise(w, h, 16, &mut rng);
    let grain: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>()).collect();
    let field = Plane::from_fn(w, h, |x, y| {
        let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
        let ramp = 0.5 + 0.5 * ((u - 0.5) * ca + (v - 0.5) * sa);
        let light: f64 = blobs
            .iter()
            .map(|(bx, by, r)| (-((u - bx).powi(2) + (v - by).powi(2)) / (r * r)).exp())
            .sum();
        let (sx, sy, sr) = shadow;
        let dark = if u > sx && u < sx + sr && v > sy && v < sy + sr { -0.25 } else { 0.0 };
        0.45 * ramp
            + 0.35 * light
            + dark
            + 0.15 * coarse.get(x, y)
            + 0.1 * fine.get(x, y)
            + 0.04 * grain[y * w + x]
    });
    let (lo, hi) = (field.min(), field.max());
    field.map(|f| 10f64.powf(decades * (f - lo) / (hi - lo)))
}

/// Writes `n` synthetic scenes as single-channel PFMs named `scene_XX.pfm`.
pub fn write_synthetic_set(dir: &Path, n: usize, w: usize, h: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..n)
        .map(|i| {
            let lum = synthetic_scene(w, h, seed.wrapping_add(i as u64));
            let path = dir.join(format!("scene_{i:02}.pfm"));
            hdrimg::save_pfm(&HdrImage::from_plane(&lum, false)?, &path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_set(dir.path(), 10, 8, 8, 0).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let a = make_dataset(dir.path(), 0.9, 3).unwrap();
        assert_eq!((a.train.len(), a.test.len()), (9, 1));
        assert_eq!(a, make_dataset(dir.path(), 0.9, 3).unwrap());
        let empty = tempfile::tempdir().unwrap();
        assert!(make_dataset(empty.path(), 0.9, 3).is_err());
    }

    #[test]
    fn augment_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = AugmentConfig {
            crop: 32,
            ..Default::default()
        };
        for (w, h) in [(50, 40), (20, 12), (32, 32)] {
            let lum = synthetic_scene(w, h, 5);
            for _ in 0..5 {
                let (c, s_max) = augment(&lum, &cfg, &mut rng).unwrap();
                assert_eq!(c.dims(), (32, 32));
                assert!((1e3..=1e5).contains(&s_max));
                assert!((c.max() - s_max).abs() <= 1e-9 * s_max);
                assert!((c.min() - 0.05).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn flip_twice_is_identity() {
        let p = synthetic_scene(9, 5, 2);
        assert_eq!(p.flip_horizontal().flip_horizontal(), p);
    }

    #[test]
    fn smax_sampling_is_log_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = AugmentConfig::default();
        let below_1e4 = (0..4000).filter(|_| sample_smax(&cfg, &mut rng) < 1e4).count();
        // Log-uniform on [1e3, 1e5] puts half the mass below 1e4.
        assert!((below_1e4 as f64 / 4000.0 - 0.5).abs() < 0.04);
    }

    #[test]
    fn synthetic_scene_spans_three_to_five_decades() {
        for seed in 0..8 {
            let p = synthetic_scene(64, 48, seed);
            let decades = (p.max() / p.min()).log10();
            assert!((3.0 - 1e-9..=5.0 + 1e-9).contains(&decades), "{decades}");
        }
    }
}
