#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nlpd_tmo::cantmo::{save_weights, ArchConfig, CanWeights};
use nlpd_tmo::hdrimg::{save_pfm, HdrImage};
use nlpd_tmo::trainer::synthetic_scene;
use nlpd_tmo::Plane;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nlpd-tmo"));
    c.env("RUST_LOG", "warn");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn write_plane(p: &Plane, path: &Path) -> PathBuf {
    save_pfm(&HdrImage::from_plane(p, false).unwrap(), path).unwrap();
    path.to_path_buf()
}

pub fn write_scene(dir: &Path, name: &str, w: usize, h: usize, seed: u64) -> PathBuf {
    write_plane(&synthetic_scene(w, h, seed), &dir.join(name))
}

/// RGB PFM whose luminance is a synthetic scene, with a per-pixel tint.
pub fn write_rgb_scene(dir: &Path, name: &str, w: usize, h: usize, seed: u64) -> PathBuf {
    let lum = synthetic_scene(w, h, seed);
    let mut data = Vec::with_capacity(w * h * 3);
    for (i, &y) in lum.data().iter().enumerate() {
        let t = (i % 7) as f64 / 7.0;
        data.extend([(y * (0.6 + 0.8 * t)) as f32, y as f32, (y * (1.4 - 0.8 * t)) as f32]);
    }
    let path = dir.join(name);
    save_pfm(&HdrImage::new(w, h, 3, data, false).unwrap(), &path).unwrap();
    path
}

pub fn write_init_weights(path: &Path, seed: u64) -> CanWeights {
    let w = CanWeights::init(ArchConfig::default(), seed).unwrap();
    save_weights(&w, path).unwrap();
    w
}

/// Decodes an 8-bit PNG into `(width, height, channels, codes)`.
pub fn read_png(path: &Path) -> (usize, usize, usize, Vec<u8>) {
    let dec = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(path).unwrap()));
    let mut reader = dec.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let info = reader.next_frame(&mut buf).unwrap();
    buf.truncate(info.buffer_size());
    (
        info.width as usize,
        info.height as usize,
        info.color_type.samples(),
        buf,
    )
}

pub fn read_luminance(path: &Path) -> Plane {
    nlpd_tmo::hdrimg::load_image_auto(path).unwrap().luminance_plane()
}
