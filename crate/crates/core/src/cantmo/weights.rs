//! Weights file: `NLPDCANW` magic, little-endian `u32` format version,
//! `u64` manifest length, JSON manifest, then a little-endian binary64 blob
//! holding every tensor at the offset the manifest declares.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, CanWeights, NetWeights, WeightsMeta};
use crate::error::{Error, Result};
use crate::gradkern::Tensor;

pub const WEIGHTS_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"NLPDCANW";
const HEADER: usize = 8 + 4 + 8;
const PUBLISHED_COUNT: usize = 74_378;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub network: String,
    pub layer: usize,
    pub kernel_shape: [usize; 4],
    pub dilation: usize,
    pub bias: bool,
    pub adaptive_norm: bool,
    pub lrelu: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub conv_per_net: usize,
    pub norm_per_net: usize,
    pub conv_total: usize,
    pub total: usize,
    pub running_stats_per_net: usize,
    pub published_total: usize,
    pub reconciliation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in values.
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    pub architecture: ArchConfig,
    pub layers: Vec<LayerInfo>,
    pub params: ParamBreakdown,
    pub tensors: Vec<TensorEntry>,
    pub blob_values: usize,
    pub meta: WeightsMeta,
}

const NETS: [&str; 2] = ["bandpass", "lowpass"];

fn net_tensors<'a>(name: &str, net: &'a NetWeights) -> Vec<(String, Vec<usize>, &'a [f64])> {
    let mut out = Vec::new();
    for (l, k) in net.kernels.iter().enumerate() {
        out.push((
            format!("{name}.conv{l}.kernel"),
            k.shape().to_vec(),
            k.data(),
        ));
    }
    for (field, vals) in [
        ("lambda1", &net.lambda1),
        ("lambda2", &net.lambda2),
        ("running_rms", &net.running_rms),
    ] {
        for (l, v) in vals.iter().enumerate() {
            out.push((
                format!("{name}.norm{l}.{field}"),
                vec![v.len()],
                v.as_slice(),
            ));
        }
    }
    out
}

impl Manifest {
    /// Architecture description and parameter accounting for `w`.
    pub fn describe(w: &CanWeights) -> Manifest {
        let arch = &w.arch;
        let layers = NETS
            .iter()
            .flat_map(|net| {
                (0..4).map(move |l| LayerInfo {
                    network: net.to_string(),
                    layer: l,
                    kernel_shape: arch.kernel_shape(l),
                    dilation: arch.dilations[l],
                    bias: false,
                    adaptive_norm: l < 3,
                    lrelu: l < 3,
                })
            })
            .collect();
        let (conv, norm) = arch.params_per_net();
        let running: usize = arch.widths[..3].iter().sum();
        let total = 2 * (conv + norm);
        let reconciliation = format!(
            "Convolution kernels: 2 x {conv} = {}. Adaptive normalization weights \
             (lambda1, lambda2 on the three normalized layers, {:?} mode): 2 x {norm} = {}. \
             Learnable total {total}. Running RMS statistics ({running} per network) are \
             buffers and are not counted. No bias arrays exist. The published figure of \
             {PUBLISHED_COUNT} exceeds this by {}; the 3x3 kernel shapes, widths and \
             dilations of the layer table account for {} of it, and the remainder is not \
             recoverable from a bias-free reading of the architecture.",
            2 * conv,
            arch.lambda_mode,
            2 * norm,
            PUBLISHED_COUNT as i64 - total as i64,
            2 * conv,
        );
        Manifest {
            format_version: WEIGHTS_VERSION,
            dtype: "f64le".into(),
            architecture: arch.clone(),
            layers,
            params: ParamBreakdown {
                conv_per_net: conv,
                norm_per_net: norm,
                conv_total: 2 * conv,
                total,
                running_stats_per_net: running,
                published_total: PUBLISHED_COUNT,
                reconciliation,
            },
            tensors: Vec::new(),
            blob_values: 0,
            meta: w.meta.clone(),
        }
    }
}

pub fn encode_weights(w: &CanWeights) -> Result<Vec<u8>> {
    w.validate()?;
    let mut manifest = Manifest::describe(w);
    let mut blob: Vec<u8> = Vec::new();
    let mut offset = 0;
    for (name, net) in NETS.iter().zip(w.nets()) {
        for (tname, shape, data) in net_tensors(name, net) {
            manifest.tensors.push(TensorEntry {
                name: tname,
                shape,
                offset,
                len: data.len(),
            });
            offset += data.len();
            for v in data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    manifest.blob_values = offset;
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Other(e.to_string()))?;
    let mut out = Vec::with_capacity(HEADER + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

pub fn decode_weights(bytes: &[u8]) -> Result<(CanWeights, Manifest)> {
    if bytes.len() < HEADER {
        return Err(Error::parse(bytes.len(), "truncated header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::parse(0, "not a weights file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != WEIGHTS_VERSION {
        return Err(Error::Version {
            found: version,
            expected: WEIGHTS_VERSION,
        });
    }
    let json_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let json_end = HEADER
        .checked_add(json_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::parse(bytes.len(), "truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[HEADER..json_end])
        .map_err(|e| Error::parse(HEADER + e.column(), format!("manifest: {e}")))?;
    if manifest.format_version != version {
        return Err(Error::Version {
            found: manifest.format_version,
            expected: WEIGHTS_VERSION,
        });
    }
    let blob = &bytes[json_end..];
    if blob.len() != manifest.blob_values * 8 {
        return Err(Error::parse(
            bytes.len(),
            format!(
                "blob holds {} bytes, manifest declares {} values",
                blob.len(),
                manifest.blob_values
            ),
        ));
    }
    let read = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
        let entry = manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::parse(json_end, format!("missing tensor {name}")))?;
        let n: usize = shape.iter().product();
        if entry.shape != shape || entry.len != n || entry.offset + n > manifest.blob_values {
            return Err(Error::parse(
                json_end + entry.offset * 8,
                format!("tensor {name} has inconsistent extent"),
            ));
        }
        Ok(blob[entry.offset * 8..(entry.offset + n) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    };
    let arch = manifest.architecture.clone();
    arch.validate()?;
    let load_net = |name: &str| -> Result<NetWeights> {
        let mut kernels = Vec::new();
        for l in 0..4 {
            let shape = arch.kernel_shape(l);
            kernels.push(Tensor::new(
                shape,
                read(&format!("{name}.conv{l}.kernel"), &shape)?,
            )?);
        }
        let vecs = |field: &str, len: &dyn Fn(usize) -> usize| -> Result<Vec<Vec<f64>>> {
            (0..3)
                .map(|l| read(&format!("{name}.norm{l}.{field}"), &[len(l)]))
                .collect()
        };
        let lam = |l: usize| arch.lambda_len(l);
        Ok(NetWeights {
            kernels,
            lambda1: vecs("lambda1", &lam)?,
            lambda2: vecs("lambda2", &lam)?,
            running_rms: vecs("running_rms", &|l| arch.widths[l])?,
        })
    };
    let w = CanWeights {
        bandpass: load_net(NETS[0])?,
        lowpass: load_net(NETS[1])?,
        arch: arch.clone(),
        meta: manifest.meta.clone(),
    };
    w.validate()?;
    Ok((w, manifest))
}

pub fn save_weights(w: &CanWeights, path: &Path) -> Result<()> {
    let bytes = encode_weights(w)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<CanWeights> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_weights(&bytes)?.0)
}
