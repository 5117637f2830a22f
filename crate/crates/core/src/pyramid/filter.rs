//! Separable 5-tap filtering with symmetric borders, plus the 2× down/up
//! samplers built on it and their exact adjoints.
//!
//! Border mode is whole-sample symmetric reflection (`-1 -> 1`, `n -> n-2`),
//! applied periodically so any offset maps into `[0, n)`.

use crate::error::{Error, Result};
use crate::plane::Plane;

pub type Taps = [f64; 5];

const HALF: isize = 2;

/// Reflect index `i` into `[0, n)` without repeating the edge sample.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= n as isize {
        r = period - r;
    }
    r as usize
}

/// Ceiling halving used by every pyramid level.
#[inline]
pub fn half(n: usize) -> usize {
    n.div_ceil(2)
}

// A length-1 axis passes through exactly (normalized taps, or a doubled
// interpolation kernel with no inserted zeros). Summing the
// taps in floating point would leave a residual of a few ulps, which the
// fractional powers of the distance pooling amplify.
fn filter_line(src: &[f64], dst: &mut [f64], taps: &Taps) {
    let n = src.len();
    if n == 1 {
        dst[0] = src[0];
        return;
    }
    let interior = if n > 4 { 2..n - 2 } else { 0..0 };
    for i in interior.clone() {
        dst[i] = taps[0] * src[i - 2]
            + taps[1] * src[i - 1]
            + taps[2] * src[i]
            + taps[3] * src[i + 1]
            + taps[4] * src[i + 2];
    }
    for i in (0..n).filter(|i| !interior.contains(i)) {
        let mut acc = 0.0;
        for (k, t) in taps.iter().enumerate() {
            acc += t * src[reflect(i as isize + k as isize - HALF, n)];
        }
        dst[i] = acc;
    }
}

fn filter_line_adjoint(g: &[f64], dst: &mut [f64], taps: &Taps) {
    let n = g.len();
    if n == 1 {
        dst[0] = g[0];
        return;
    }
    dst.iter_mut().for_each(|v| *v = 0.0);
    for (i, &gi) in g.iter().enumerate() {
        if gi == 0.0 {
            continue;
        }
        for (k, t) in taps.iter().enumerate() {
            dst[reflect(i as isize + k as isize - HALF, n)] += t * gi;
        }
    }
}

fn rows_with(plane: &Plane, taps: &Taps, line: fn(&[f64], &mut [f64], &Taps)) -> Plane {
    let (w, h) = plane.dims();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        line(plane.row(y), &mut out[y * w..(y + 1) * w], taps);
    }
    Plane::new(w, h, out).expect("dims preserved")
}

fn cols_with(plane: &Plane, taps: &Taps, line: fn(&[f64], &mut [f64], &Taps)) -> Plane {
    let (w, h) = plane.dims();
    let src = plane.data();
    let mut out = vec![0.0; w * h];
    let mut col = vec![0.0; h];
    let mut res = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = src[y * w + x];
        }
        line(&col, &mut res, taps);
        for y in 0..h {
            out[y * w + x] = res[y];
        }
    }
    Plane::new(w, h, out).expect("dims preserved")
}

/// Separable filtering `taps ⊗ taps` with symmetric borders.
pub fn filter_separable(plane: &Plane, taps: &Taps) -> Plane {
    cols_with(&rows_with(plane, taps, filter_line), taps, filter_line)
}

/// Adjoint of [`filter_separable`] (differs from it near the borders).
pub fn filter_separable_adjoint(grad: &Plane, taps: &Taps) -> Plane {
    rows_with(
        &cols_with(grad, taps, filter_line_adjoint),
        taps,
        filter_line_adjoint,
    )
}

fn decimate(plane: &Plane) -> Plane {
    let (w, h) = plane.dims();
    Plane::from_fn(half(w), half(h), |x, y| plane.get(2 * x, 2 * y))
}

fn zero_insert(plane: &Plane, width: usize, height: usize) -> Plane {
    let mut out = Plane::zeros(width, height);
    for y in 0..plane.height() {
        for x in 0..plane.width() {
            out.set(2 * x, 2 * y, plane.get(x, y));
        }
    }
    out
}

fn doubled(taps: &Taps) -> Taps {
    taps.map(|t| 2.0 * t)
}

fn check_up_dims(small: (usize, usize), width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 || half(width) != small.0 || half(height) != small.1 {
        return Err(Error::Shape(format!(
            "cannot upsample {}x{} to {width}x{height}",
            small.0, small.1
        )));
    }
    Ok(())
}

/// Lowpass filter then keep even-indexed samples; output dims are `⌈w/2⌉ × ⌈h/2⌉`.
pub fn downsample(plane: &Plane, taps: &Taps) -> Plane {
    decimate(&filter_separable(plane, taps))
}

/// Adjoint of [`downsample`] back onto a `width × height` plane.
pub fn downsample_adjoint(grad: &Plane, taps: &Taps, width: usize, height: usize) -> Result<Plane> {
    check_up_dims(grad.dims(), width, height)?;
    Ok(filter_separable_adjoint(
        &zero_insert(grad, width, height),
        taps,
    ))
}

/// Zero-insert to `width × height`, then filter with `2·taps` per axis
/// (a length-1 axis has nothing inserted and passes through).
pub fn upsample(plane: &Plane, taps: &Taps, width: usize, height: usize) -> Result<Plane> {
    check_up_dims(plane.dims(), width, height)?;
    Ok(filter_separable(
        &zero_insert(plane, width, height),
        &doubled(taps),
    ))
}

/// Adjoint of [`upsample`]; `grad` has the upsampled dims.
pub fn upsample_adjoint(grad: &Plane, taps: &Taps) -> Plane {
    decimate(&filter_separable_adjoint(grad, &doubled(taps)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const L: Taps = [0.05, 0.25, 0.4, 0.25, 0.05];

    fn random_plane(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Plane {
        Plane::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0))
    }

    fn dot(a: &Plane, b: &Plane) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    /// Non-separable, non-strided reference: explicit 5×5 outer-product kernel.
    fn dense_filter(plane: &Plane, taps: &Taps) -> Plane {
        let (w, h) = plane.dims();
        Plane::from_fn(w, h, |x, y| {
            let mut acc = 0.0;
            for ky in 0..5 {
                for kx in 0..5 {
                    let sy = reflect(y as isize + ky as isize - 2, h);
                    let sx = reflect(x as isize + kx as isize - 2, w);
                    acc += taps[ky] * taps[kx] * plane.get(sx, sy);
                }
            }
            acc
        })
    }

    #[test]
    fn reflect_is_symmetric_without_edge_repeat() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(-3, 2), 1);
        assert_eq!(reflect(7, 1), 0);
        for n in 1..6 {
            for i in -20..20 {
                assert!(reflect(i, n) < n);
            }
        }
    }

    #[test]
    fn separable_matches_dense_on_8x8() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (w, h) in [(8, 8), (7, 5), (3, 8), (1, 4), (2, 2)] {
            let p = random_plane(w, h, &mut rng);
            let d = filter_separable(&p, &L).max_abs_diff(&dense_filter(&p, &L));
            assert!(d <= 1e-10, "{w}x{h}: {d}");
        }
    }

    #[test]
    fn downsample_ramp_matches_dense_oracle() {
        let ramp = Plane::from_fn(4, 4, |x, y| (4 * y + x) as f64);
        let dense = dense_filter(&ramp, &L);
        let got = downsample(&ramp, &L);
        assert_eq!(got.dims(), (2, 2));
        for y in 0..2 {
            for x in 0..2 {
                assert!((got.get(x, y) - dense.get(2 * x, 2 * y)).abs() < 1e-12);
            }
        }
        // Hand value at (0,0): reflected row/col weights [0.4, 0.5, 0.1] on 0,1,2.
        let w = [0.4, 0.5, 0.1];
        let mut expect = 0.0;
        for (j, wy) in w.iter().enumerate() {
            for (i, wx) in w.iter().enumerate() {
                expect += wy * wx * (4 * j + i) as f64;
            }
        }
        assert!((got.get(0, 0) - expect).abs() < 1e-12);
    }

    #[test]
    fn constants_are_preserved() {
        for (w, h) in [(1, 1), (2, 3), (5, 5), (8, 7), (16, 9)] {
            let c = Plane::filled(w, h, 3.25);
            let d = downsample(&c, &L);
            assert!(d.data().iter().all(|v| (v - 3.25).abs() < 1e-12));
            let small = Plane::filled(half(w), half(h), 3.25);
            let u = upsample(&small, &L, w, h).unwrap();
            assert!(
                u.data().iter().all(|v| (v - 3.25).abs() < 1e-12),
                "{w}x{h}: {:?}",
                u.data()
            );
        }
    }

    #[test]
    fn upsample_rejects_inconsistent_dims() {
        let p = Plane::filled(3, 3, 1.0);
        assert!(upsample(&p, &L, 8, 6).is_err());
        assert!(upsample(&p, &L, 6, 5).is_ok());
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (w, h) in [(1, 1), (2, 5), (7, 6), (9, 9), (16, 3)] {
            let x = random_plane(w, h, &mut rng);
            let g = random_plane(w, h, &mut rng);
            let lhs = dot(&filter_separable(&x, &L), &g);
            let rhs = dot(&x, &filter_separable_adjoint(&g, &L));
            assert!((lhs - rhs).abs() < 1e-12, "filter {w}x{h}");

            let gs = random_plane(half(w), half(h), &mut rng);
            let lhs = dot(&downsample(&x, &L), &gs);
            let rhs = dot(&x, &downsample_adjoint(&gs, &L, w, h).unwrap());
            assert!((lhs - rhs).abs() < 1e-12, "down {w}x{h}");

            let lhs = dot(&upsample(&gs, &L, w, h).unwrap(), &g);
            let rhs = dot(&gs, &upsample_adjoint(&g, &L));
            assert!((lhs - rhs).abs() < 1e-12, "up {w}x{h}");
        }
    }
}
