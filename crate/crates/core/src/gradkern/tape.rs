//! Reverse-mode tape. Nodes live in an arena addressed by [`Var`]; leaves
//! keep a persistent gradient that every backward pass adds into.

use crate::error::{Error, Result};
use crate::pyramid::Taps;

use super::{conv, ops, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Statistics source for [`Tape::adaptive_norm`].
#[derive(Clone, Debug)]
pub enum NormMode {
    /// Per-channel RMS of the input itself.
    Train,
    /// Fixed per-channel RMS.
    Infer(Vec<f64>),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        x: Var,
        k: Var,
        dilation: usize,
    },
    LRelu {
        x: Var,
        slope: f64,
    },
    Norm {
        x: Var,
        l1: Var,
        l2: Var,
        sigma: Vec<f64>,
        batch_stats: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine {
        x: Var,
        scale: f64,
    },
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    Up {
        x: Var,
        taps: Taps,
    },
    Down {
        x: Var,
        taps: Taps,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded at or after `mark` (a previous [`Tape::len`]).
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf. With `requires_grad`, backward passes accumulate into it.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf (zeros if nothing has flowed into it).
    pub fn grad(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        node.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(node.value.shape()))
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn conv2d(&mut self, x: Var, k: Var, dilation: usize) -> Result<Var> {
        let y = conv::conv2d(self.value(x), self.value(k), dilation)?;
        Ok(self.push(y, Op::Conv { x, k, dilation }, &[x, k]))
    }

    pub fn lrelu(&mut self, x: Var, slope: f64) -> Result<Var> {
        if !(0.0..=1.0).contains(&slope) {
            return Err(Error::InvalidParam(format!(
                "LReLU slope {slope} outside [0, 1]"
            )));
        }
        let y = ops::lrelu(self.value(x), slope);
        Ok(self.push(y, Op::LRelu { x, slope }, &[x]))
    }

    /// Adaptive normalization; `l1`, `l2` hold one value per channel or a
    /// single shared value. Returns the output and the `σ` that was used.
    pub fn adaptive_norm(
        &mut self,
        x: Var,
        l1: Var,
        l2: Var,
        mode: NormMode,
    ) -> Result<(Var, Vec<f64>)> {
        let xv = self.value(x);
        if xv.shape()[0] == 0 {
            return Err(Error::Shape("normalization needs a non-empty batch".into()));
        }
        let (sigma, batch_stats) = match mode {
            NormMode::Train => (ops::channel_rms(xv), true),
            NormMode::Infer(s) => (s, false),
        };
        let y = ops::adaptive_norm(xv, self.value(l1).data(), self.value(l2).data(), &sigma)?;
        let out = self.push(
            y,
            Op::Norm {
                x,
                l1,
                l2,
                sigma: sigma.clone(),
                batch_stats,
            },
            &[x, l1, l2],
        );
        Ok((out, sigma))
    }

    fn binary(&mut self, a: Var, b: Var, f: fn(f64, f64) -> f64) -> Result<Tensor> {
        self.value(a).zip_map(self.value(b), f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, |p, q| p + q)?;
        Ok(self.push(y, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, |p, q| p - q)?;
        Ok(self.push(y, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, |p, q| p * q)?;
        Ok(self.push(y, Op::Mul(a, b), &[a, b]))
    }

    /// `scale·x + offset`.
    pub fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Var {
        let y = self.value(x).map(|v| scale * v + offset);
        self.push(y, Op::Affine { x, scale }, &[x])
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(ops::sigmoid);
        self.push(y, Op::Sigmoid(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    pub fn upsample(&mut self, x: Var, taps: &Taps, width: usize, height: usize) -> Result<Var> {
        let y = ops::upsample(self.value(x), taps, width, height)?;
        Ok(self.push(y, Op::Up { x, taps: *taps }, &[x]))
    }

    pub fn downsample(&mut self, x: Var, taps: &Taps) -> Result<Var> {
        let y = ops::downsample(self.value(x), taps)?;
        Ok(self.push(y, Op::Down { x, taps: *taps }, &[x]))
    }

    /// Backpropagates from a scalar `loss` with seed 1.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_with(loss, Tensor::filled(self.value(loss).shape(), 1.0))
    }

    /// Backpropagates an externally computed `∂L/∂out`.
    pub fn backward_with(&mut self, out: Var, seed: Tensor) -> Result<()> {
        self.value(out).check_same_shape(&seed)?;
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(out.0 + 1, || None);
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let contributions = self.vjp(i, &g)?;
            for (v, t) in contributions {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot => *slot = Some(t),
                }
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                match &mut self.nodes[i].grad {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn vjp(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv { x, k, dilation } => {
                let (gx, gk) = conv::conv2d_backward(self.value(*x), self.value(*k), *dilation, g)?;
                vec![(*x, gx), (*k, gk)]
            }
            Op::LRelu { x, slope } => vec![(*x, ops::lrelu_backward(self.value(*x), *slope, g))],
            Op::Norm {
                x,
                l1,
                l2,
                sigma,
                batch_stats,
            } => {
                let (gx, g1, g2) = ops::adaptive_norm_backward(
                    self.value(*x),
                    self.value(*l1).data(),
                    self.value(*l2).data(),
                    sigma,
                    *batch_stats,
                    g,
                );
                vec![
                    (*x, gx),
                    (*l1, Tensor::new(self.value(*l1).shape(), g1)?),
                    (*l2, Tensor::new(self.value(*l2).shape(), g2)?),
                ]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => vec![
                (*a, g.zip_map(self.value(*b), |p, q| p * q)?),
                (*b, g.zip_map(self.value(*a), |p, q| p * q)?),
            ],
            Op::Affine { x, scale } => vec![(*x, g.map(|v| v * scale))],
            Op::Sigmoid(x) => vec![(*x, g.zip_map(&node.value, |gv, s| gv * s * (1.0 - s))?)],
            Op::Sum(x) => vec![(*x, Tensor::filled(self.value(*x).shape(), g.data()[0]))],
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                vec![(*x, Tensor::filled(self.value(*x).shape(), g.data()[0] / n))]
            }
            Op::Up { x, taps } => vec![(*x, ops::upsample_backward(g, taps)?)],
            Op::Down { x, taps } => {
                let [_, _, h, w] = self.value(*x).shape();
                vec![(*x, ops::downsample_backward(g, taps, w, h)?)]
            }
        })
    }
}
