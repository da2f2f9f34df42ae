//! Control-grid displacement parametrization.
//!
//! Knots sit on an N-spaced lattice covering the pixel domain. The map
//! from knot displacements to the dense field is linear (per-pixel
//! multilinear interpolation of the knots), and its exact adjoint
//! scatters a per-pixel gradient field back onto the knots.

use crate::error::{Error, Result};
use crate::exec;
use crate::field::{ScalarField, Shape};

use super::DisplacementField;

/// Knot lattice with per-knot displacement vectors (channel-major:
/// all axis-0 values, then all axis-1 values, ...).
#[derive(Clone, Debug, PartialEq)]
pub struct ControlGrid {
    image_shape: Shape,
    spacing: usize,
    lattice: Shape,
    data: Vec<f64>,
}

fn lattice_for(image_shape: Shape, spacing: usize) -> Shape {
    let dims: Vec<usize> = image_shape
        .dims()
        .iter()
        .map(|&n| ((n - 1).div_ceil(spacing) + 1).max(2))
        .collect();
    Shape::from_dims(&dims).expect("image shape dimensionality")
}

impl ControlGrid {
    /// Zero-displacement lattice covering `image_shape`.
    pub fn zeros(image_shape: Shape, spacing: usize) -> ControlGrid {
        let lattice = lattice_for(image_shape, spacing);
        let n = lattice.len() * image_shape.ndim();
        ControlGrid { image_shape, spacing, lattice, data: vec![0.0; n] }
    }

    pub fn from_data(
        image_shape: Shape,
        spacing: usize,
        data: Vec<f64>,
    ) -> Result<ControlGrid> {
        let lattice = lattice_for(image_shape, spacing);
        if data.len() != lattice.len() * image_shape.ndim() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} knot values", lattice.len() * image_shape.ndim()),
                got: format!("{}", data.len()),
                context: "ControlGrid::from_data",
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ControlGrid::from_data"));
        }
        Ok(ControlGrid { image_shape, spacing, lattice, data })
    }

    pub fn image_shape(&self) -> Shape {
        self.image_shape
    }

    pub fn spacing(&self) -> usize {
        self.spacing
    }

    pub fn lattice(&self) -> Shape {
        self.lattice
    }

    pub fn ndim(&self) -> usize {
        self.image_shape.ndim()
    }

    /// Flat parameter vector (channel-major).
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn knot_count(&self) -> usize {
        self.lattice.len()
    }

    fn channel(&self, axis: usize) -> &[f64] {
        let n = self.lattice.len();
        &self.data[axis * n..(axis + 1) * n]
    }

    /// Interpolate the knot channel at lattice coordinates `q` (in knot
    /// units).
    fn sample_channel(&self, axis: usize, q: &[f64; 3]) -> f64 {
        let ch = self.channel(axis);
        let lat = self.lattice;
        match lat.ndim() {
            2 => {
                let (r0, fr) = super::warp::axis_cell(q[0], lat.dim(0));
                let (c0, fc) = super::warp::axis_cell(q[1], lat.dim(1));
                let i = lat.idx2(r0, c0);
                let w = lat.dim(1);
                (1.0 - fr) * ((1.0 - fc) * ch[i] + fc * ch[i + 1])
                    + fr * ((1.0 - fc) * ch[i + w] + fc * ch[i + w + 1])
            }
            _ => {
                let (p0, f0) = super::warp::axis_cell(q[0], lat.dim(0));
                let (r0, f1) = super::warp::axis_cell(q[1], lat.dim(1));
                let (c0, f2) = super::warp::axis_cell(q[2], lat.dim(2));
                let mut acc = 0.0;
                for (dp, wp) in [(0, 1.0 - f0), (1, f0)] {
                    for (dr, wr) in [(0, 1.0 - f1), (1, f1)] {
                        for (dc, wc) in [(0, 1.0 - f2), (1, f2)] {
                            acc += wp
                                * wr
                                * wc
                                * ch[lat.idx3(p0 + dp, r0 + dr, c0 + dc)];
                        }
                    }
                }
                acc
            }
        }
    }
}

/// Dense displacement field from knot displacements.
pub fn control_to_field(grid: &ControlGrid) -> DisplacementField {
    let shape = grid.image_shape;
    let ndim = shape.ndim();
    let spacing = grid.spacing as f64;
    let channels: Vec<ScalarField> = (0..ndim)
        .map(|axis| {
            let mut out = ScalarField::zeros(shape);
            exec::fill(out.data_mut(), |idx| {
                let c = shape.coords(idx);
                let q = [
                    c[0] as f64 / spacing,
                    c[1] as f64 / spacing,
                    c[2] as f64 / spacing,
                ];
                grid.sample_channel(axis, &q)
            });
            out
        })
        .collect();
    DisplacementField::new(channels).expect("finite knots produce finite fields")
}

/// Exact adjoint of [`control_to_field`]: gathers a per-pixel gradient
/// field into per-knot sums so that
/// `<control_to_field(D), g> == <D, control_to_field_adjoint(g)>`.
pub fn control_to_field_adjoint(grid: &ControlGrid, g: &DisplacementField) -> Vec<f64> {
    let shape = grid.image_shape;
    let ndim = shape.ndim();
    let lat = grid.lattice;
    let nk = lat.len();
    let spacing = grid.spacing;

    // Forward interpolation weight of knot coordinate `kc` at a pixel.
    let knot_weight = |pixel: usize, kc: usize, axis: usize| -> f64 {
        let (cell, frac) =
            super::warp::axis_cell(pixel as f64 / spacing as f64, lat.dim(axis));
        if cell == kc {
            1.0 - frac
        } else if cell + 1 == kc {
            frac
        } else {
            0.0
        }
    };
    let window = |kc: usize, axis: usize| -> (usize, usize) {
        let lo = kc.saturating_sub(1) * spacing;
        let hi = ((kc + 1) * spacing).min(shape.dim(axis) - 1);
        (lo.min(hi), hi)
    };

    let mut out = vec![0.0; nk * ndim];
    for axis in 0..ndim {
        let gch = g.channel(axis).data();
        let slice = &mut out[axis * nk..(axis + 1) * nk];
        exec::fill_chunks(slice, |start, chunk| {
            for (j, slot) in chunk.iter_mut().enumerate() {
                let kc = lat.coords(start + j);
                let (r_lo, r_hi) = window(kc[0], 0);
                let (c_lo, c_hi) = window(kc[1], 1);
                let mut acc = 0.0;
                if ndim == 2 {
                    for r in r_lo..=r_hi {
                        let wr = knot_weight(r, kc[0], 0);
                        if wr == 0.0 {
                            continue;
                        }
                        for c in c_lo..=c_hi {
                            let wc = knot_weight(c, kc[1], 1);
                            if wc != 0.0 {
                                acc += wr * wc * gch[shape.idx2(r, c)];
                            }
                        }
                    }
                } else {
                    let (p_lo, p_hi) = window(kc[2], 2);
                    for r in r_lo..=r_hi {
                        let wr = knot_weight(r, kc[0], 0);
                        if wr == 0.0 {
                            continue;
                        }
                        for c in c_lo..=c_hi {
                            let wc = knot_weight(c, kc[1], 1);
                            if wc == 0.0 {
                                continue;
                            }
                            for p in p_lo..=p_hi {
                                let wp = knot_weight(p, kc[2], 2);
                                if wp != 0.0 {
                                    acc += wr * wc * wp * gch[shape.idx3(r, c, p)];
                                }
                            }
                        }
                    }
                }
                *slot = acc;
            }
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lattice_covers_domain() {
        let g = ControlGrid::zeros(Shape::d2(24, 17), 4);
        assert_eq!(g.lattice().dims(), &[7, 5]);
        // (7-1)*4 = 24 >= 23, (5-1)*4 = 16 >= 16
    }

    #[test]
    fn zero_knots_zero_field() {
        let g = ControlGrid::zeros(Shape::d2(12, 12), 4);
        let t = control_to_field(&g);
        assert_eq!(t.max_abs(), 0.0);
    }

    #[test]
    fn constant_knots_constant_field() {
        let shape = Shape::d2(13, 9);
        let mut g = ControlGrid::zeros(shape, 4);
        let nk = g.knot_count();
        for v in &mut g.data_mut()[..nk] {
            *v = 2.0;
        }
        let t = control_to_field(&g);
        for &v in t.channel(0).data() {
            assert!((v - 2.0).abs() < 1e-12);
        }
        for &v in t.channel(1).data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn adjoint_identity() {
        let shape = Shape::d2(19, 23);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut grid = ControlGrid::zeros(shape, 4);
        for v in grid.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let g = DisplacementField::new(vec![
            ScalarField::from_vec(
                shape,
                (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap(),
            ScalarField::from_vec(
                shape,
                (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap(),
        ])
        .unwrap();

        let t = control_to_field(&grid);
        let lhs: f64 = (0..2).map(|a| t.channel(a).dot(g.channel(a))).sum();
        let adj = control_to_field_adjoint(&grid, &g);
        let rhs: f64 = grid.data().iter().zip(&adj).map(|(d, a)| d * a).sum();
        assert!(
            (lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0),
            "adjoint identity: {lhs} vs {rhs}"
        );
    }

    #[test]
    fn linearity_in_knots() {
        let shape = Shape::d2(10, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut g1 = ControlGrid::zeros(shape, 4);
        let mut g2 = ControlGrid::zeros(shape, 4);
        for v in g1.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        for v in g2.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mut sum = g1.clone();
        for (s, b) in sum.data_mut().iter_mut().zip(g2.data()) {
            *s = 2.0 * *s + 3.0 * b;
        }
        let t1 = control_to_field(&g1);
        let t2 = control_to_field(&g2);
        let ts = control_to_field(&sum);
        for a in 0..2 {
            for i in 0..shape.len() {
                let expect = 2.0 * t1.channel(a).at(i) + 3.0 * t2.channel(a).at(i);
                assert!((ts.channel(a).at(i) - expect).abs() < 1e-12);
            }
        }
    }
}
