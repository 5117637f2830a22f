//! Forward kernels and their vector-Jacobian products, free of any tape.

use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::pyramid::{filter, half, Taps};

use super::Tensor;

/// Lower clamp on the per-channel RMS.
pub const SIGMA_FLOOR: f64 = 1e-12;

pub fn lrelu(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

/// Slope at zero is `slope`.
pub fn lrelu_backward(x: &Tensor, slope: f64, g: &Tensor) -> Tensor {
    x.zip_map(g, |v, gv| if v > 0.0 { gv } else { slope * gv })
        .expect("shapes checked by caller")
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Per-channel RMS over `(n, h, w)`, clamped below at [`SIGMA_FLOOR`].
pub fn channel_rms(x: &Tensor) -> Vec<f64> {
    let [n, c, _, _] = x.shape();
    let count = (n * x.plane_len()) as f64;
    (0..c)
        .map(|ch| {
            let ss: f64 = (0..n)
                .map(|s| x.slice(s, ch).iter().map(|v| v * v).sum::<f64>())
                .sum();
            (ss / count).sqrt().max(SIGMA_FLOOR)
        })
        .collect()
}

/// Per-channel λ, either one value per channel or a single shared value.
fn lambda_at(l: &[f64], ch: usize) -> f64 {
    if l.len() == 1 {
        l[0]
    } else {
        l[ch]
    }
}

fn check_lambda(l: &[f64], c: usize) -> Result<()> {
    if l.len() != 1 && l.len() != c {
        return Err(Error::Shape(format!(
            "normalization weights have {} entries for {c} channels",
            l.len()
        )));
    }
    Ok(())
}

/// `λ1·x + λ2·x/σ_c` with the given per-channel `σ`.
pub fn adaptive_norm(x: &Tensor, l1: &[f64], l2: &[f64], sigma: &[f64]) -> Result<Tensor> {
    let [n, c, _, _] = x.shape();
    check_lambda(l1, c)?;
    check_lambda(l2, c)?;
    if sigma.len() != c {
        return Err(Error::Shape(format!(
            "{} statistics for {c} channels",
            sigma.len()
        )));
    }
    let mut out = x.clone();
    for s in 0..n {
        for (ch, &sg) in sigma.iter().enumerate() {
            let a = lambda_at(l1, ch) + lambda_at(l2, ch) / sg;
            out.slice_mut(s, ch).iter_mut().for_each(|v| *v *= a);
        }
    }
    Ok(out)
}

/// Gradients of [`adaptive_norm`] w.r.t. `(x, λ1, λ2)`. With `batch_stats`,
/// `σ` is treated as the RMS of `x` itself and differentiated through.
pub fn adaptive_norm_backward(
    x: &Tensor,
    l1: &[f64],
    l2: &[f64],
    sigma: &[f64],
    batch_stats: bool,
    g: &Tensor,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let [n, _, _, _] = x.shape();
    let count = (n * x.plane_len()) as f64;
    let mut gx = Tensor::zeros(x.shape());
    let mut gl1 = vec![0.0; l1.len()];
    let mut gl2 = vec![0.0; l2.len()];
    for (ch, &sg) in sigma.iter().enumerate() {
        let (a1, a2) = (lambda_at(l1, ch), lambda_at(l2, ch));
        let gxsum: f64 = (0..n)
            .map(|s| {
                x.slice(s, ch)
                    .iter()
                    .zip(g.slice(s, ch))
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .sum();
        gl1[if l1.len() == 1 { 0 } else { ch }] += gxsum;
        gl2[if l2.len() == 1 { 0 } else { ch }] += gxsum / sg;
        let direct = a1 + a2 / sg;
        let through_sigma = if batch_stats && sg > SIGMA_FLOOR {
            a2 * gxsum / (count * sg * sg * sg)
        } else {
            0.0
        };
        for s in 0..n {
            let xs = x.slice(s, ch);
            let gs = g.slice(s, ch);
            for ((o, &xv), &gv) in gx.slice_mut(s, ch).iter_mut().zip(xs).zip(gs) {
                *o = gv * direct - xv * through_sigma;
            }
        }
    }
    (gx, gl1, gl2)
}

fn per_plane(
    x: &Tensor,
    out_hw: (usize, usize),
    f: impl Fn(&Plane) -> Result<Plane>,
) -> Result<Tensor> {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = out_hw;
    let mut out = Tensor::zeros([n, c, oh, ow]);
    for s in 0..n {
        for ch in 0..c {
            let p = Plane::new(w, h, x.slice(s, ch).to_vec())?;
            out.slice_mut(s, ch).copy_from_slice(f(&p)?.data());
        }
    }
    Ok(out)
}

/// Pyramid downsampling applied to every `(n, c)` plane.
pub fn downsample(x: &Tensor, taps: &Taps) -> Result<Tensor> {
    let [_, _, h, w] = x.shape();
    per_plane(x, (half(h), half(w)), |p| Ok(filter::downsample(p, taps)))
}

pub fn downsample_backward(g: &Tensor, taps: &Taps, width: usize, height: usize) -> Result<Tensor> {
    per_plane(g, (height, width), |p| {
        filter::downsample_adjoint(p, taps, width, height)
    })
}

/// Pyramid upsampling of every `(n, c)` plane to `width × height`.
pub fn upsample(x: &Tensor, taps: &Taps, width: usize, height: usize) -> Result<Tensor> {
    per_plane(x, (height, width), |p| {
        filter::upsample(p, taps, width, height)
    })
}

pub fn upsample_backward(g: &Tensor, taps: &Taps) -> Result<Tensor> {
    let [_, _, h, w] = g.shape();
    per_plane(g, (half(h), half(w)), |p| {
        Ok(filter::upsample_adjoint(p, taps))
    })
}
