//! Reference tone mappers and the image-space NLPD optimizer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradkern::ops::sigmoid;
use crate::hdrimg::DisplayRange;
use crate::nlpd::{NlpdParams, NlpdReference};
use crate::plane::Plane;

fn affine_to_display(p: &Plane, display: &DisplayRange, what: &str) -> Result<Plane> {
    let (lo, hi) = (p.min(), p.max());
    if !(hi > lo) {
        return Err(Error::Degenerate(format!("{what}: input has no range")));
    }
    let k = display.span() / (hi - lo);
    Ok(p.map(|v| (display.i_min + k * (v - lo)).clamp(display.i_min, display.i_max)))
}

fn check_positive(s: &Plane) -> Result<()> {
    if !s.is_finite() || s.data().iter().any(|&v| v <= 0.0) {
        return Err(Error::Domain("luminance must be finite and positive".into()));
    }
    Ok(())
}

/// Affine map of the observed `[min, max]` onto the display range.
pub fn tmo_linear(s: &Plane, display: &DisplayRange) -> Result<Plane> {
    affine_to_display(s, display, "linear")
}

/// Affine map of `log S` onto the display range.
pub fn tmo_log(s: &Plane, display: &DisplayRange) -> Result<Plane> {
    check_positive(s)?;
    affine_to_display(&s.map(f64::ln), display, "log")
}

fn median(p: &Plane) -> f64 {
    let mut v = p.data().to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `r = S / (S + median S)` mapped as `i_min + span·r`.
pub fn tmo_sigmoid(s: &Plane, display: &DisplayRange) -> Result<Plane> {
    check_positive(s)?;
    let med = median(s);
    Ok(s.map(|v| display.i_min + display.span() * v / (v + med)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Linear,
    GlobalLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptConfig {
    pub max_iters: usize,
    /// Largest per-pixel change of the display image in one step, as a
    /// fraction of the display span.
    pub step: f64,
    /// Stop once `ℓ` changed by less than `tol` (relative) over `window` iterations.
    pub tol: f64,
    pub window: usize,
    pub max_backtracks: usize,
    /// Step multiplier after an accepted step (capped at 8× the initial step).
    pub growth: f64,
    pub init: InitMode,
    pub nlpd: NlpdParams,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            max_iters: 500,
            step: 0.02,
            tol: 1e-6,
            window: 10,
            max_backtracks: 20,
            growth: 1.2,
            init: InitMode::GlobalLog,
            nlpd: NlpdParams::default(),
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.tol >= 0.0 && self.growth >= 1.0 && self.window > 0) {
            return Err(Error::InvalidParam(
                "step must be positive, tol non-negative, growth at least 1".into(),
            ));
        }
        self.nlpd.validate()
    }
}

#[derive(Clone, Debug)]
pub struct OptResult {
    pub image: Plane,
    /// `ℓ` of the initialization followed by `ℓ` after each accepted step.
    pub trace: Vec<f64>,
    pub converged: bool,
}

/// Keeps the initial fraction away from the sigmoid's asymptotes.
const INIT_MARGIN: f64 = 1e-3;

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Gradient descent on `u`, with `I = i_min + span·sigmoid(u)`. Each step
/// moves `u` along `−∇u/max|∇u|`; a step that increases `ℓ` is halved and
/// retried, and the run ends when no step within the backtracking budget
/// decreases `ℓ`.
pub fn nlpd_opt(s: &Plane, display: &DisplayRange, cfg: &OptConfig) -> Result<OptResult> {
    cfg.validate()?;
    let init = match cfg.init {
        InitMode::Linear => tmo_linear(s, display)?,
        InitMode::GlobalLog => tmo_log(s, display)?,
    };
    let span = display.span();
    let mut u = init.map(|v| {
        let p = ((v - display.i_min) / span).clamp(INIT_MARGIN, 1.0 - INIT_MARGIN);
        logit(p)
    });
    let to_image = |u: &Plane| u.map(|v| display.i_min + span * sigmoid(v));
    let reference = NlpdReference::new(s, &cfg.nlpd)?;
    let eval = |img: &Plane| -> Result<(f64, Plane)> {
        let (rep, g) = reference.eval_with_grad(img)?;
        if !rep.distance.is_finite() || !g.is_finite() {
            return Err(Error::NonFinite("NLPD-Opt loss or gradient".into()));
        }
        Ok((rep.distance, g))
    };

    let mut image = to_image(&u);
    let (mut loss, mut grad_i) = eval(&image)?;
    let mut trace = vec![loss];
    // dI/du ≤ span/4, so a u-step of 4·step moves I by at most step·span.
    let base = 4.0 * cfg.step;
    let mut eta = base;
    let mut converged = false;

    for _ in 0..cfg.max_iters {
        let gu = grad_i.zip_map(&u, |g, v| {
            let sg = sigmoid(v);
            g * span * sg * (1.0 - sg)
        })?;
        let norm = gu.max_abs();
        if norm == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let k = eta / norm;
            let cand_u = u.zip_map(&gu, |v, g| v - k * g)?;
            let cand = to_image(&cand_u);
            let (l, g) = eval(&cand)?;
            if l <= loss {
                accepted = Some((cand_u, cand, l, g));
                break;
            }
            eta *= 0.5;
        }
        let Some((nu, nimg, l, g)) = accepted else {
            converged = true;
            break;
        };
        u = nu;
        image = nimg;
        loss = l;
        grad_i = g;
        trace.push(loss);
        eta = (eta * cfg.growth).min(8.0 * base);
        if trace.len() > cfg.window {
            let old = trace[trace.len() - 1 - cfg.window];
            if (old - loss).abs() <= cfg.tol * old.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
    }
    Ok(OptResult {
        image,
        trace,
        converged,
    })
}

/// Writes `iter,nlpd` rows.
pub fn write_trace_csv(trace: &[f64], path: &Path) -> Result<()> {
    let io = |e: csv::Error| Error::Other(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["iter", "nlpd"]).map_err(io)?;
    for (i, l) in trace.iter().enumerate() {
        w.write_record([i.to_string(), format!("{l:.17e}")]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
