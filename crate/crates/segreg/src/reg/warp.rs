//! Image warping by displacement fields.
//!
//! `warp(f, T)(x) = f(x + T(x))` with bilinear (trilinear) interpolation
//! and edge-clamped sample coordinates. Integer sample positions take
//! the single-tap path, so a zero displacement reproduces the input
//! bit for bit.

use crate::error::{Error, Result};
use crate::exec;
use crate::field::{LabelMap, ScalarField, Shape, SoftSegmentation};

use super::DisplacementField;

/// Fractional position along one axis: clamped cell index and in-cell
/// offset.
#[inline]
pub(crate) fn axis_cell(p: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let p = p.clamp(0.0, (n - 1) as f64);
    let mut i = p.floor() as usize;
    if i > n - 2 {
        i = n - 2;
    }
    (i, p - i as f64)
}

/// Multi-linear sample of `f` at continuous coordinates `p`.
#[inline]
pub(crate) fn sample_linear(f: &ScalarField, p: &[f64; 3]) -> f64 {
    let shape = f.shape();
    let d = f.data();
    match shape.ndim() {
        2 => {
            let (r0, fr) = axis_cell(p[0], shape.dim(0));
            let (c0, fc) = axis_cell(p[1], shape.dim(1));
            let i = shape.idx2(r0, c0);
            let w = shape.dim(1);
            match (fr == 0.0, fc == 0.0) {
                (true, true) => d[i],
                (true, false) => (1.0 - fc) * d[i] + fc * d[i + 1],
                (false, true) => (1.0 - fr) * d[i] + fr * d[i + w],
                (false, false) => {
                    (1.0 - fr) * ((1.0 - fc) * d[i] + fc * d[i + 1])
                        + fr * ((1.0 - fc) * d[i + w] + fc * d[i + w + 1])
                }
            }
        }
        _ => {
            let (p0, f0) = axis_cell(p[0], shape.dim(0));
            let (r0, f1) = axis_cell(p[1], shape.dim(1));
            let (c0, f2) = axis_cell(p[2], shape.dim(2));
            if f0 == 0.0 && f1 == 0.0 && f2 == 0.0 {
                return d[shape.idx3(p0, r0, c0)];
            }
            let mut acc = 0.0;
            for (dp, wp) in [(0, 1.0 - f0), (1, f0)] {
                if wp == 0.0 {
                    continue;
                }
                for (dr, wr) in [(0, 1.0 - f1), (1, f1)] {
                    if wr == 0.0 {
                        continue;
                    }
                    for (dc, wc) in [(0, 1.0 - f2), (1, f2)] {
                        if wc == 0.0 {
                            continue;
                        }
                        acc += wp * wr * wc * d[shape.idx3(p0 + dp, r0 + dr, c0 + dc)];
                    }
                }
            }
            acc
        }
    }
}

/// Sample value and the exact in-cell gradient of the interpolant.
///
/// The gradient is the derivative of the piecewise-multilinear sample
/// with respect to the continuous coordinates; components saturated by
/// the coordinate clamp are zero.
#[inline]
pub(crate) fn sample_linear_grad(f: &ScalarField, p: &[f64; 3], grad: &mut [f64; 3]) -> f64 {
    let shape = f.shape();
    let d = f.data();
    match shape.ndim() {
        2 => {
            let (n0, n1) = (shape.dim(0), shape.dim(1));
            let (r0, fr) = axis_cell(p[0], n0);
            let (c0, fc) = axis_cell(p[1], n1);
            let i = shape.idx2(r0, c0);
            let w = n1;
            let (v00, v01) = (d[i], d[i + 1]);
            let (v10, v11) = (d[i + w], d[i + w + 1]);
            let val = (1.0 - fr) * ((1.0 - fc) * v00 + fc * v01)
                + fr * ((1.0 - fc) * v10 + fc * v11);
            grad[0] = (1.0 - fc) * (v10 - v00) + fc * (v11 - v01);
            grad[1] = (1.0 - fr) * (v01 - v00) + fr * (v11 - v10);
            grad[2] = 0.0;
            if p[0] < 0.0 || p[0] > (n0 - 1) as f64 || n0 == 1 {
                grad[0] = 0.0;
            }
            if p[1] < 0.0 || p[1] > (n1 - 1) as f64 || n1 == 1 {
                grad[1] = 0.0;
            }
            val
        }
        _ => {
            let (n0, n1, n2) = (shape.dim(0), shape.dim(1), shape.dim(2));
            let (p0, f0) = axis_cell(p[0], n0);
            let (r0, f1) = axis_cell(p[1], n1);
            let (c0, f2) = axis_cell(p[2], n2);
            let at = |dp: usize, dr: usize, dc: usize| d[shape.idx3(p0 + dp, r0 + dr, c0 + dc)];
            let lerp = |a: f64, b: f64, t: f64| (1.0 - t) * a + t * b;
            // collapse the last axis, then the middle one
            let g00 = lerp(at(0, 0, 0), at(0, 0, 1), f2);
            let g01 = lerp(at(0, 1, 0), at(0, 1, 1), f2);
            let g10 = lerp(at(1, 0, 0), at(1, 0, 1), f2);
            let g11 = lerp(at(1, 1, 0), at(1, 1, 1), f2);
            let h0 = lerp(g00, g01, f1);
            let h1 = lerp(g10, g11, f1);
            let val = lerp(h0, h1, f0);
            grad[0] = h1 - h0;
            grad[1] = lerp(g01 - g00, g11 - g10, f0);
            let e00 = at(0, 0, 1) - at(0, 0, 0);
            let e01 = at(0, 1, 1) - at(0, 1, 0);
            let e10 = at(1, 0, 1) - at(1, 0, 0);
            let e11 = at(1, 1, 1) - at(1, 1, 0);
            grad[2] = lerp(lerp(e00, e01, f1), lerp(e10, e11, f1), f0);
            if p[0] < 0.0 || p[0] > (n0 - 1) as f64 || n0 == 1 {
                grad[0] = 0.0;
            }
            if p[1] < 0.0 || p[1] > (n1 - 1) as f64 || n1 == 1 {
                grad[1] = 0.0;
            }
            if p[2] < 0.0 || p[2] > (n2 - 1) as f64 || n2 == 1 {
                grad[2] = 0.0;
            }
            val
        }
    }
}

fn check_shapes(shape: Shape, t: &DisplacementField, context: &'static str) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::ShapeMismatch {
            expected: shape.to_string(),
            got: t.shape().to_string(),
            context,
        });
    }
    Ok(())
}

/// Pull-back warp `out(x) = f(x + T(x))`.
pub fn warp(f: &ScalarField, t: &DisplacementField) -> Result<ScalarField> {
    check_shapes(f.shape(), t, "warp")?;
    let shape = f.shape();
    let ndim = shape.ndim();
    let tch: Vec<&[f64]> = t.channels().iter().map(|c| c.data()).collect();
    let mut out = ScalarField::zeros(shape);
    exec::fill(out.data_mut(), |idx| {
        let c = shape.coords(idx);
        let mut p = [0.0f64; 3];
        for a in 0..ndim {
            p[a] = c[a] as f64 + tch[a][idx];
        }
        sample_linear(f, &p)
    });
    Ok(out)
}

/// Nearest-neighbor warp for categorical maps.
pub fn warp_nearest(l: &LabelMap, t: &DisplacementField) -> Result<LabelMap> {
    if t.shape() != l.shape() {
        return Err(Error::ShapeMismatch {
            expected: l.shape().to_string(),
            got: t.shape().to_string(),
            context: "warp_nearest",
        });
    }
    let shape = l.shape();
    let ndim = shape.ndim();
    let ids = l.ids();
    let mut out = vec![0u32; shape.len()];
    for (idx, slot) in out.iter_mut().enumerate() {
        let c = shape.coords(idx);
        let mut q = [0usize; 3];
        for a in 0..ndim {
            let p = c[a] as f64 + t.channel(a).at(idx);
            q[a] = p.round().clamp(0.0, (shape.dim(a) - 1) as f64) as usize;
        }
        *slot = ids[shape.index_of(&q[..ndim])];
    }
    LabelMap::new(shape, l.k(), out)
}

/// Warp every channel of a probability stack and renormalize.
pub fn warp_stack(s: &SoftSegmentation, t: &DisplacementField) -> Result<SoftSegmentation> {
    let channels = s
        .channels()
        .iter()
        .map(|ch| warp(ch, t))
        .collect::<Result<Vec<_>>>()?;
    SoftSegmentation::from_unnormalized(channels)
}
