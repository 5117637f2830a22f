//! Pyramid dumps: one PFM per plane plus `manifest.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LaplacianPyramid, NormalizedPyramid, PyramidParams};
use crate::error::{Error, Result};
use crate::hdrimg::pfm::{self, PfmData};
use crate::plane::Plane;

pub const DUMP_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DumpManifest {
    pub version: u32,
    pub levels: usize,
    /// `[width, height]` per level, finest first.
    pub dims: Vec<[usize; 2]>,
    pub laplacian: Vec<String>,
    pub normalized: Vec<String>,
    pub params: PyramidParams,
}

fn to_pfm(p: &Plane) -> PfmData {
    PfmData {
        width: p.width(),
        height: p.height(),
        channels: 1,
        data: p.data().iter().map(|&v| v as f32).collect(),
    }
}

fn from_pfm(p: PfmData) -> Result<Plane> {
    if p.channels != 1 {
        return Err(Error::Shape("pyramid planes must be single-channel".into()));
    }
    Plane::new(
        p.width,
        p.height,
        p.data.into_iter().map(f64::from).collect(),
    )
}

pub fn write_dump(
    dir: &Path,
    lap: &LaplacianPyramid,
    norm: &NormalizedPyramid,
    params: &PyramidParams,
) -> Result<DumpManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = DumpManifest {
        version: DUMP_VERSION,
        levels: lap.levels(),
        dims: lap.planes().map(|p| [p.width(), p.height()]).collect(),
        laplacian: Vec::new(),
        normalized: Vec::new(),
        params: params.clone(),
    };
    for (i, p) in lap.planes().enumerate() {
        let name = format!("laplacian_{i:02}.pfm");
        pfm::write(&to_pfm(p), &dir.join(&name))?;
        manifest.laplacian.push(name);
    }
    for (i, p) in norm.planes.iter().enumerate() {
        let name = format!("normalized_{i:02}.pfm");
        pfm::write(&to_pfm(p), &dir.join(&name))?;
        manifest.normalized.push(name);
    }
    let path = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DumpManifest> {
    let path = dir.join("manifest.json");
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let m: DumpManifest = serde_json::from_slice(&bytes)
        .map_err(|e| Error::parse(e.column(), format!("manifest: {e}")))?;
    if m.version != DUMP_VERSION {
        return Err(Error::Version {
            found: m.version,
            expected: DUMP_VERSION,
        });
    }
    Ok(m)
}

/// Reloads the Laplacian planes of a dump.
pub fn read_laplacian(dir: &Path) -> Result<(LaplacianPyramid, DumpManifest)> {
    let m = read_manifest(dir)?;
    let mut planes = m
        .laplacian
        .iter()
        .map(|name| from_pfm(pfm::read(&dir.join(name))?))
        .collect::<Result<Vec<_>>>()?;
    let lowpass = planes
        .pop()
        .ok_or_else(|| Error::Degenerate("dump has no planes".into()))?;
    Ok((
        LaplacianPyramid {
            bandpass: planes,
            lowpass,
        },
        m,
    ))
}
