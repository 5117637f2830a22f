//! Checkpoint directory: `weights.bin` (the regular weights file, carrying
//! the completed epoch count), `adam.bin` and `log.csv`.
//!
//! `adam.bin`: `NLPDADAM` magic, `u32` version, `u64` step, `u64` tensor
//! count, then per tensor a `u64` length followed by the first and second
//! moments as little-endian binary64.

use std::path::Path;

use super::{AdamState, EpochLog, TrainState};
use crate::cantmo::{load_weights, save_weights};
use crate::error::{Error, Result};

pub const ADAM_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"NLPDADAM";

fn encode_adam(s: &AdamState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ADAM_VERSION.to_le_bytes());
    out.extend_from_slice(&s.step.to_le_bytes());
    out.extend_from_slice(&(s.m.len() as u64).to_le_bytes());
    for (m, v) in s.m.iter().zip(&s.v) {
        out.extend_from_slice(&(m.len() as u64).to_le_bytes());
        for x in m.iter().chain(v) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(self.bytes.len(), "truncated optimizer state"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::parse(self.pos, "length overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

fn decode_adam(bytes: &[u8]) -> Result<AdamState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::parse(0, "not an optimizer state file"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != ADAM_VERSION {
        return Err(Error::Version {
            found: version,
            expected: ADAM_VERSION,
        });
    }
    let step = r.u64()?;
    let count = r.u64()? as usize;
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for _ in 0..count {
        let n = r.u64()? as usize;
        m.push(r.f64s(n)?);
        v.push(r.f64s(n)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::parse(r.pos, "trailing bytes in optimizer state"));
    }
    Ok(AdamState { m, v, step })
}

pub fn write_log_csv(log: &[EpochLog], path: &Path) -> Result<()> {
    let io = |e: csv::Error| Error::Other(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for e in log {
        w.serialize(e).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log_csv(path: &Path) -> Result<Vec<EpochLog>> {
    let io = |e: csv::Error| Error::Other(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    r.deserialize().map(|row| row.map_err(io)).collect()
}

pub fn save_checkpoint(dir: &Path, state: &TrainState) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut weights = state.weights.clone();
    weights.meta.epochs = state.epoch;
    save_weights(&weights, &dir.join("weights.bin"))?;
    let adam = dir.join("adam.bin");
    std::fs::write(&adam, encode_adam(&state.adam)).map_err(|e| Error::io(&adam, e))?;
    write_log_csv(&state.log, &dir.join("log.csv"))
}

pub fn load_checkpoint(dir: &Path) -> Result<TrainState> {
    let weights = load_weights(&dir.join("weights.bin"))?;
    let adam_path = dir.join("adam.bin");
    let bytes = std::fs::read(&adam_path).map_err(|e| Error::io(&adam_path, e))?;
    let adam = decode_adam(&bytes)?;
    let lens: Vec<usize> = weights.params().iter().map(|p| p.len()).collect();
    if adam.m.iter().map(|m| m.len()).collect::<Vec<_>>() != lens {
        return Err(Error::Shape("optimizer state does not match the weights".into()));
    }
    let log = read_log_csv(&dir.join("log.csv"))?;
    let epoch = weights.meta.epochs;
    if log.len() != epoch {
        return Err(Error::Other(format!(
            "checkpoint log has {} rows for {epoch} completed epochs",
            log.len()
        )));
    }
    Ok(TrainState {
        weights,
        adam,
        epoch,
        log,
    })
}
