//! Bias-free 3×3 dilated convolution with symmetric padding.
//!
//! Pixels are processed in fixed-size tiles: each tile is expanded into a
//! `(9·in_c) × T` column matrix and multiplied by the kernel matrix. Tiles
//! may run in parallel; every reduction (kernel gradient, input-gradient
//! scatter) is folded in tile order, so results do not depend on the
//! number of threads.

use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};
use crate::pyramid::reflect;

const TILE: usize = 1024;

/// Reflected source indices for the three kernel offsets along each axis.
struct Geometry {
    h: usize,
    w: usize,
    rows: [Vec<usize>; 3],
    cols: [Vec<usize>; 3],
}

impl Geometry {
    fn new(h: usize, w: usize, dilation: usize) -> Self {
        let d = dilation as isize;
        let idx = |n: usize, k: isize| (0..n).map(|i| reflect(i as isize + k * d, n)).collect();
        Geometry {
            h,
            w,
            rows: [idx(h, -1), idx(h, 0), idx(h, 1)],
            cols: [idx(w, -1), idx(w, 0), idx(w, 1)],
        }
    }

    fn tiles(&self) -> Vec<(usize, usize)> {
        let hw = self.h * self.w;
        (0..hw)
            .step_by(TILE)
            .map(|p0| (p0, (p0 + TILE).min(hw)))
            .collect()
    }

    /// Source pixel for output pixel `p` and tap `(ky, kx)`.
    #[inline]
    fn src(&self, p: usize, ky: usize, kx: usize) -> usize {
        let (y, x) = (p / self.w, p % self.w);
        self.rows[ky][y] * self.w + self.cols[kx][x]
    }
}

/// Fills `col` (`(9·in_c) × (p1 − p0)`, row-major) for one sample.
fn im2col(x: &[f64], in_c: usize, g: &Geometry, p0: usize, p1: usize, col: &mut [f64]) {
    let t = p1 - p0;
    let hw = g.h * g.w;
    for ic in 0..in_c {
        let plane = &x[ic * hw..(ic + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ic * 9) + ky * 3 + kx) * t..][..t];
                let mut p = p0;
                while p < p1 {
                    let y = p / g.w;
                    let x0 = p % g.w;
                    let x1 = (g.w).min(x0 + (p1 - p));
                    let src_row = &plane[g.rows[ky][y] * g.w..][..g.w];
                    let cols = &g.cols[kx];
                    for (o, xi) in row[p - p0..p - p0 + (x1 - x0)].iter_mut().zip(x0..x1) {
                        *o = src_row[cols[xi]];
                    }
                    p += x1 - x0;
                }
            }
        }
    }
}

/// `c (m×n) = a (m×k) · b (k×n)` with explicit strides, overwriting `c`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    // SAFETY: callers pass slices whose extents cover every strided index
    // touched for the given (m, k, n); `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

fn check(x: &Tensor, k: &Tensor, dilation: usize) -> Result<()> {
    let [_, in_c, _, _] = x.shape();
    let [_, k_in, kh, kw] = k.shape();
    if kh != 3 || kw != 3 {
        return Err(Error::Shape(format!("kernel must be 3x3, got {kh}x{kw}")));
    }
    if k_in != in_c {
        return Err(Error::Shape(format!(
            "kernel expects {k_in} input channels, tensor has {in_c}"
        )));
    }
    if dilation == 0 {
        return Err(Error::InvalidParam("dilation must be positive".into()));
    }
    Ok(())
}

/// Cross-correlation `out[o] = Σ_i k[o,i] ⋆ x[i]`, same spatial size as `x`.
pub fn conv2d(x: &Tensor, k: &Tensor, dilation: usize) -> Result<Tensor> {
    check(x, k, dilation)?;
    let [n, in_c, h, w] = x.shape();
    let out_c = k.shape()[0];
    let g = Geometry::new(h, w, dilation);
    let hw = h * w;
    let kk = in_c * 9;
    let tiles = g.tiles();
    let mut out = Tensor::zeros([n, out_c, h, w]);
    for s in 0..n {
        let xs = &x.data()[s * in_c * hw..(s + 1) * in_c * hw];
        let results: Vec<Vec<f64>> = tiles
            .par_iter()
            .map(|&(p0, p1)| {
                let t = p1 - p0;
                let mut col = vec![0.0; kk * t];
                im2col(xs, in_c, &g, p0, p1, &mut col);
                let mut res = vec![0.0; out_c * t];
                gemm(
                    out_c,
                    kk,
                    t,
                    k.data(),
                    kk as isize,
                    1,
                    &col,
                    t as isize,
                    1,
                    &mut res,
                    t as isize,
                    1,
                );
                res
            })
            .collect();
        let od = &mut out.data_mut()[s * out_c * hw..(s + 1) * out_c * hw];
        for (&(p0, p1), res) in tiles.iter().zip(&results) {
            let t = p1 - p0;
            for oc in 0..out_c {
                od[oc * hw + p0..oc * hw + p1].copy_from_slice(&res[oc * t..(oc + 1) * t]);
            }
        }
    }
    Ok(out)
}

/// Gradients `(∂L/∂x, ∂L/∂k)` given `∂L/∂out`.
pub fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    dilation: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    check(x, k, dilation)?;
    let [n, in_c, h, w] = x.shape();
    let out_c = k.shape()[0];
    if grad_out.shape() != [n, out_c, h, w] {
        return Err(Error::Shape(format!(
            "conv output gradient {:?} does not match {:?}",
            grad_out.shape(),
            [n, out_c, h, w]
        )));
    }
    let g = Geometry::new(h, w, dilation);
    let hw = h * w;
    let kk = in_c * 9;
    let tiles = g.tiles();
    let batch = (rayon::current_num_threads() * 2).max(1);

    let mut grad_k = Tensor::zeros(k.shape());
    let mut grad_x = Tensor::zeros(x.shape());
    for s in 0..n {
        let xs = &x.data()[s * in_c * hw..(s + 1) * in_c * hw];
        let gs = &grad_out.data()[s * out_c * hw..(s + 1) * out_c * hw];
        let gx = &mut grad_x.data_mut()[s * in_c * hw..(s + 1) * in_c * hw];
        for group in tiles.chunks(batch) {
            let parts: Vec<(Vec<f64>, Vec<f64>)> = group
                .par_iter()
                .map(|&(p0, p1)| {
                    let t = p1 - p0;
                    let mut col = vec![0.0; kk * t];
                    im2col(xs, in_c, &g, p0, p1, &mut col);
                    let g_tile = &gs[p0..];
                    // ∂k (out_c × kk) = G (out_c × t) · colᵀ
                    let mut dk = vec![0.0; out_c * kk];
                    gemm(
                        out_c,
                        t,
                        kk,
                        g_tile,
                        hw as isize,
                        1,
                        &col,
                        1,
                        t as isize,
                        &mut dk,
                        kk as isize,
                        1,
                    );
                    // ∂col (kk × t) = kᵀ · G
                    let mut dcol = vec![0.0; kk * t];
                    gemm(
                        kk,
                        out_c,
                        t,
                        k.data(),
                        1,
                        kk as isize,
                        g_tile,
                        hw as isize,
                        1,
                        &mut dcol,
                        t as isize,
                        1,
                    );
                    (dk, dcol)
                })
                .collect();
            for (dk, _) in &parts {
                for (a, b) in grad_k.data_mut().iter_mut().zip(dk) {
                    *a += b;
                }
            }
            gx.par_chunks_mut(hw).enumerate().for_each(|(ic, plane)| {
                for (&(p0, p1), (_, dcol)) in group.iter().zip(&parts) {
                    let t = p1 - p0;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let row = &dcol[(ic * 9 + ky * 3 + kx) * t..][..t];
                            for (i, v) in row.iter().enumerate() {
                                plane[g.src(p0 + i, ky, kx)] += v;
                            }
                        }
                    }
                }
            });
        }
    }
    Ok((grad_x, grad_k))
}
