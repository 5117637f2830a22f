//! Normalized Laplacian pyramid distance and its gradient.
//!
//! ```text
//! l(S, I) = [ 1/m · Σ_i ( 1/n_i · Σ_j |y_ij − ỹ_ij|^alpha )^(beta/alpha) ]^(1/beta)
//! ```
//!
//! where `y = f(S)` and `ỹ = f(I)` are normalized pyramids computed with the
//! same front end. The gradient with respect to `I` is the hand-derived
//! adjoint of every stage (power, generalized means, divisive normalization,
//! Laplacian recursion, front-end power).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::pyramid::filter::{downsample_adjoint, filter_separable_adjoint, upsample_adjoint};
use crate::pyramid::{self, downsample, front_end, upsample, NormalizedPyramid, PyramidParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlpdParams {
    pub alpha: f64,
    pub beta: f64,
    pub pyramid: PyramidParams,
}

impl Default for NlpdParams {
    fn default() -> Self {
        NlpdParams {
            alpha: 2.0,
            beta: 0.6,
            pyramid: PyramidParams::default(),
        }
    }
}

impl NlpdParams {
    pub fn with_levels(levels: usize) -> Self {
        NlpdParams {
            pyramid: PyramidParams::with_levels(levels),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::InvalidParam(format!(
                "alpha and beta must be positive, got {} and {}",
                self.alpha, self.beta
            )));
        }
        self.pyramid.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlpdReport {
    pub distance: f64,
    /// `(1/n_i Σ_j |Δ|^alpha)^(beta/alpha)` for each level, finest first.
    pub per_level: Vec<f64>,
    /// Coefficient count `n_i` per level.
    pub counts: Vec<usize>,
}

/// Intermediates of `f(I)` kept for the backward pass.
struct Analysis {
    input: Plane,
    xs: Vec<Plane>,
    zs: Vec<Plane>,
    divisors: Vec<Plane>,
    ys: Vec<Plane>,
}

fn analyze_keep(img: &Plane, p: &PyramidParams) -> Result<Analysis> {
    let x1 = front_end(img, p.gamma)?;
    let m = p.levels;
    let mut xs = vec![x1];
    for i in 1..m {
        let next = downsample(&xs[i - 1], &p.lowpass_taps);
        xs.push(next);
    }
    let mut zs = Vec::with_capacity(m);
    let mut divisors = Vec::with_capacity(m);
    let mut ys = Vec::with_capacity(m);
    for i in 0..m {
        let z = if i + 1 < m {
            let up = upsample(&xs[i + 1], &p.lowpass_taps, xs[i].width(), xs[i].height())?;
            xs[i].zip_map(&up, |a, b| a - b)?
        } else {
            xs[i].clone()
        };
        let div = if i + 1 < m {
            pyramid::bandpass_divisor(&z, p)
        } else {
            z.map(|v| v.abs() + p.c_lowpass)
        };
        ys.push(z.zip_map(&div, |a, d| a / d)?);
        zs.push(z);
        divisors.push(div);
    }
    Ok(Analysis {
        input: img.clone(),
        xs,
        zs,
        divisors,
        ys,
    })
}

#[inline]
fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Pooled report plus the raw per-level means of `|Δ|^alpha`.
fn pool(reference: &[Plane], test: &[Plane], params: &NlpdParams) -> (NlpdReport, Vec<f64>) {
    let (alpha, beta) = (params.alpha, params.beta);
    let mut per_level = Vec::with_capacity(reference.len());
    let mut counts = Vec::with_capacity(reference.len());
    let mut means = Vec::with_capacity(reference.len());
    for (y, t) in reference.iter().zip(test) {
        let n = y.len();
        let sum: f64 = y
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b).abs().powf(alpha))
            .sum();
        let mean = sum / n as f64;
        per_level.push(if mean > 0.0 {
            mean.powf(beta / alpha)
        } else {
            0.0
        });
        counts.push(n);
        means.push(mean);
    }
    let avg = per_level.iter().sum::<f64>() / per_level.len() as f64;
    let distance = if avg > 0.0 { avg.powf(1.0 / beta) } else { 0.0 };
    (
        NlpdReport {
            distance,
            per_level,
            counts,
        },
        means,
    )
}

/// Normalized pyramid of a fixed reference image, reused across evaluations.
#[derive(Clone, Debug)]
pub struct NlpdReference {
    params: NlpdParams,
    target: NormalizedPyramid,
    dims: (usize, usize),
}

impl NlpdReference {
    pub fn new(reference: &Plane, params: &NlpdParams) -> Result<Self> {
        params.validate()?;
        Ok(NlpdReference {
            params: params.clone(),
            target: pyramid::analyze(reference, &params.pyramid)?,
            dims: reference.dims(),
        })
    }

    pub fn params(&self) -> &NlpdParams {
        &self.params
    }

    fn check(&self, img: &Plane) -> Result<()> {
        if img.dims() != self.dims {
            return Err(Error::Shape(format!(
                "NLPD inputs differ in size: {:?} vs {:?}",
                self.dims,
                img.dims()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, img: &Plane) -> Result<NlpdReport> {
        self.check(img)?;
        let test = pyramid::analyze(img, &self.params.pyramid)?;
        Ok(pool(&self.target.planes, &test.planes, &self.params).0)
    }

    /// Distance and `∂l/∂I`. The gradient is zero when the distance is zero.
    pub fn eval_with_grad(&self, img: &Plane) -> Result<(NlpdReport, Plane)> {
        self.check(img)?;
        let p = &self.params;
        let pp = &p.pyramid;
        let fwd = analyze_keep(img, pp)?;
        let (report, means) = pool(&self.target.planes, &fwd.ys, p);
        let m = pp.levels;
        if report.distance == 0.0 {
            return Ok((report, Plane::zeros(img.width(), img.height())));
        }

        let (alpha, beta) = (p.alpha, p.beta);
        let avg = report.distance.powf(beta);
        let d_avg = avg.powf(1.0 / beta - 1.0) / beta;

        // Gradient w.r.t. each normalized test plane.
        let mut g_z = Vec::with_capacity(m);
        for i in 0..m {
            let term = report.per_level[i];
            let n = report.counts[i] as f64;
            let y = &self.target.planes[i];
            let t = &fwd.ys[i];
            let g_y = if term > 0.0 {
                let mean = means[i];
                let d_term = d_avg / m as f64;
                let d_mean = d_term * (beta / alpha) * mean.powf(beta / alpha - 1.0);
                t.zip_map(y, |a, b| {
                    let e = a - b;
                    if e == 0.0 {
                        0.0
                    } else {
                        d_mean * alpha / n * e.abs().powf(alpha - 1.0) * signum0(e)
                    }
                })?
            } else {
                Plane::zeros(t.width(), t.height())
            };

            let z = &fwd.zs[i];
            let div = &fwd.divisors[i];
            let gz = if i + 1 < m {
                // y = z / (P|z| + c)
                let direct = g_y.zip_map(div, |g, d| g / d)?;
                let through_div = Plane::new(
                    z.width(),
                    z.height(),
                    g_y.data()
                        .iter()
                        .zip(z.data())
                        .zip(div.data())
                        .map(|((g, zv), d)| -g * zv / (d * d))
                        .collect(),
                )?;
                let back = filter_separable_adjoint(&through_div, &pp.norm_taps);
                let mut out = direct;
                for ((o, b), zv) in out.data_mut().iter_mut().zip(back.data()).zip(z.data()) {
                    *o += b * signum0(*zv);
                }
                out
            } else {
                // y = z / (|z| + c)  =>  dy/dz = c / (|z| + c)^2
                let c = pp.c_lowpass;
                g_y.zip_map(div, |g, d| g * c / (d * d))?
            };
            g_z.push(gz);
        }

        // Laplacian recursion, coarse to fine.
        let mut g_x = g_z[m - 1].clone();
        for i in (0..m - 1).rev() {
            let up_t = upsample_adjoint(&g_z[i], &pp.lowpass_taps);
            g_x = g_x.zip_map(&up_t, |a, b| a - b)?;
            let (w, h) = fwd.xs[i].dims();
            let down_t = downsample_adjoint(&g_x, &pp.lowpass_taps, w, h)?;
            g_x = g_z[i].zip_map(&down_t, |a, b| a + b)?;
        }

        let gamma = pp.gamma;
        let grad = g_x.zip_map(&fwd.input, |g, v| g * gamma * v.powf(gamma - 1.0))?;
        Ok((report, grad))
    }
}

/// NLPD between a reference luminance `reference` and a test luminance `test`.
pub fn nlpd(reference: &Plane, test: &Plane, params: &NlpdParams) -> Result<NlpdReport> {
    reference.check_same_dims(test)?;
    NlpdReference::new(reference, params)?.eval(test)
}

/// `∂l/∂test`.
pub fn nlpd_grad(reference: &Plane, test: &Plane, params: &NlpdParams) -> Result<Plane> {
    Ok(nlpd_with_grad(reference, test, params)?.1)
}

pub fn nlpd_with_grad(
    reference: &Plane,
    test: &Plane,
    params: &NlpdParams,
) -> Result<(NlpdReport, Plane)> {
    reference.check_same_dims(test)?;
    NlpdReference::new(reference, params)?.eval_with_grad(test)
}
