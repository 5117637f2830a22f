use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment estimates shaped like the parameter list.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    fn check(&self, lens: impl Iterator<Item = usize> + Clone, what: &str) -> Result<()> {
        let ok = self.m.len() == lens.clone().count()
            && self.m.iter().zip(lens.clone()).all(|(m, n)| m.len() == n)
            && self.v.iter().zip(lens).all(|(v, n)| v.len() == n);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("optimizer state does not match {what}")))
        }
    }
}

/// Bias-corrected Adam update in place.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[Vec<f64>], state: &mut AdamState, lr: f64) -> Result<()> {
    state.check(params.iter().map(|p| p.len()), "parameters")?;
    state.check(grads.iter().map(|g| g.len()), "gradients")?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + EPSILON);
        }
    }
    Ok(())
}
