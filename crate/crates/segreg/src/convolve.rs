//! Convolution with edge replication.
//!
//! The production route runs separable 1-D passes per axis. A padded-FFT
//! route is provided as an independent second path; the two agree to
//! 1e-8 and the test suite holds them to it. Boundaries are handled by
//! nearest-pixel extension in both routes, which keeps normalized
//! kernels mass-preserving (a constant field convolves to itself).

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::Result;
use crate::exec;
use crate::field::ScalarField;
use crate::kernel::Kernel;

/// Separable spatial convolution with edge replication.
pub fn convolve(f: &ScalarField, k: &Kernel) -> Result<ScalarField> {
    f.check_finite("convolve input")?;
    let shape = f.shape();
    let w = k.weights_1d();
    let r = k.radius() as isize;

    let mut cur = f.clone();
    for axis in 0..shape.ndim() {
        let n_axis = shape.dim(axis);
        let inner: usize = shape.dims()[axis + 1..].iter().product();
        let mut out = ScalarField::zeros(shape);
        let src = cur.data();
        exec::fill(out.data_mut(), |idx| {
            let t = (idx / inner) % n_axis;
            let mut acc = 0.0;
            for (j, &wj) in w.iter().enumerate() {
                let tt = (t as isize + j as isize - r).clamp(0, n_axis as isize - 1);
                let pos = (idx as isize + (tt - t as isize) * inner as isize) as usize;
                acc += wj * src[pos];
            }
            acc
        });
        cur = out;
    }
    Ok(cur)
}

/// Adjoint of [`convolve`] under the discrete inner product.
///
/// Edge replication makes the convolution operator non-symmetric: mass
/// folded onto the border rows accumulates in their columns. Updates
/// derived by differentiating the energy with respect to a
/// kernel-smoothed quantity therefore need the transpose operator, which
/// this computes exactly: `<convolve(f), g> == <f, convolve_transpose(g)>`.
pub fn convolve_transpose(f: &ScalarField, k: &Kernel) -> Result<ScalarField> {
    f.check_finite("convolve_transpose input")?;
    let shape = f.shape();
    let w = k.weights_1d();
    let r = k.radius();

    let mut cur = f.clone();
    for axis in 0..shape.ndim() {
        let n = shape.dim(axis);
        let inner: usize = shape.dims()[axis + 1..].iter().product();
        let mut out = ScalarField::zeros(shape);
        let src = cur.data();
        exec::fill(out.data_mut(), |idx| {
            let y = (idx / inner) % n;
            let line = |t: usize| src[(idx as isize + (t as isize - y as isize) * inner as isize) as usize];
            if n == 1 {
                return line(0);
            }
            if y == 0 {
                // Everything the forward pass clamped to the low edge.
                let mut acc = 0.0;
                for o in 0..=r {
                    let hi = o.min(n - 1);
                    let mut s = 0.0;
                    for t in 0..=hi {
                        s += line(t);
                    }
                    acc += w[r - o] * s;
                }
                acc
            } else if y == n - 1 {
                let mut acc = 0.0;
                for o in 0..=r {
                    let lo = (n - 1).saturating_sub(o);
                    let mut s = 0.0;
                    for t in lo..n {
                        s += line(t);
                    }
                    acc += w[r + o] * s;
                }
                acc
            } else {
                // Interior: zero-padded correlation.
                let mut acc = 0.0;
                for (j, &wj) in w.iter().enumerate() {
                    let t = y as isize - (j as isize - r as isize);
                    if (0..n as isize).contains(&t) {
                        acc += wj * line(t as usize);
                    }
                }
                acc
            }
        });
        cur = out;
    }
    Ok(cur)
}

/// Column sums of the replicated convolution operator
/// (`convolve_transpose` applied to ones). Equal to one away from the
/// boundary and larger on it.
pub fn column_mass(shape: crate::field::Shape, k: &Kernel) -> Result<ScalarField> {
    convolve_transpose(&ScalarField::constant(shape, 1.0), k)
}

/// Padded-FFT convolution, equivalent to [`convolve`] up to round-off.
///
/// Each axis is padded by the kernel radius with replicated edge values,
/// circularly convolved via forward/inverse FFT, and cropped back.
pub fn convolve_fft(f: &ScalarField, k: &Kernel) -> Result<ScalarField> {
    f.check_finite("convolve_fft input")?;
    let shape = f.shape();
    let w = k.weights_1d();
    let r = k.radius();

    let mut planner = FftPlanner::<f64>::new();
    let mut cur = f.clone();
    for axis in 0..shape.ndim() {
        let n = shape.dim(axis);
        let m = n + 2 * r;
        let inner: usize = shape.dims()[axis + 1..].iter().product();
        let outer: usize = shape.dims()[..axis].iter().product();

        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);

        // Spectrum of the kernel embedded with wrap-around layout.
        let mut kspec = vec![Complex::new(0.0, 0.0); m];
        for (j, &wj) in w.iter().enumerate() {
            let off = j as isize - r as isize;
            let pos = off.rem_euclid(m as isize) as usize;
            kspec[pos] = Complex::new(wj, 0.0);
        }
        fwd.process(&mut kspec);

        let src = cur.data().to_vec();
        let mut out = ScalarField::zeros(shape);
        let scale = 1.0 / m as f64;
        // One padded line per (outer, inner) pair.
        let data = out.data_mut();
        let mut line = vec![Complex::new(0.0, 0.0); m];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                for t in 0..m {
                    let tt = (t as isize - r as isize).clamp(0, n as isize - 1) as usize;
                    line[t] = Complex::new(src[base + tt * inner], 0.0);
                }
                fwd.process(&mut line);
                for (v, ks) in line.iter_mut().zip(&kspec) {
                    *v *= ks;
                }
                inv.process(&mut line);
                for t in 0..n {
                    data[base + t * inner] = line[t + r].re * scale;
                }
            }
        }
        cur = out;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(shape: Shape, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ScalarField::from_vec(shape, data).unwrap()
    }

    /// Direct dense-tap convolution with clamped coordinates.
    fn brute(f: &ScalarField, k: &Kernel) -> ScalarField {
        let shape = f.shape();
        let taps = k.dense_taps(shape.ndim());
        ScalarField::from_fn(shape, |c| {
            let mut acc = 0.0;
            for (off, w) in &taps {
                let mut q = [0usize; 3];
                for a in 0..shape.ndim() {
                    q[a] = (c[a] as isize + off[a]).clamp(0, shape.dim(a) as isize - 1) as usize;
                }
                acc += w * f.at(shape.index_of(&q[..shape.ndim()]));
            }
            acc
        })
    }

    #[test]
    fn constant_preserved() {
        let f = ScalarField::constant(Shape::d2(9, 7), 3.25);
        for k in [Kernel::gaussian(2.0).unwrap(), Kernel::boxcar(5).unwrap()] {
            let g = convolve(&f, &k).unwrap();
            for &v in g.data() {
                assert!((v - 3.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn delta_box3_spreads_ninth() {
        let shape = Shape::d2(7, 7);
        let mut f = ScalarField::zeros(shape);
        f.data_mut()[shape.idx2(3, 3)] = 1.0;
        let g = convolve(&f, &Kernel::boxcar(3).unwrap()).unwrap();
        for r in 0..7 {
            for c in 0..7 {
                let expect = if (2..=4).contains(&r) && (2..=4).contains(&c) {
                    1.0 / 9.0
                } else {
                    0.0
                };
                assert!((g.at(g.shape().idx2(r, c)) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn matches_brute_force_2d() {
        let f = random_field(Shape::d2(16, 16), 11);
        for k in [Kernel::gaussian(1.7).unwrap(), Kernel::boxcar(7).unwrap()] {
            let a = convolve(&f, &k).unwrap();
            let b = brute(&f, &k);
            let max = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(max < 1e-10, "separable vs brute diff {max}");
        }
    }

    #[test]
    fn matches_brute_force_3d() {
        let f = random_field(Shape::d3(6, 7, 8), 12);
        let k = Kernel::gaussian(1.0).unwrap();
        let a = convolve(&f, &k).unwrap();
        let b = brute(&f, &k);
        let max = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(max < 1e-10, "separable vs brute diff {max}");
    }

    #[test]
    fn fft_route_agrees_with_spatial() {
        for (shape, seed) in [(Shape::d2(20, 13), 3u64), (Shape::d2(32, 32), 4)] {
            let f = random_field(shape, seed);
            for k in [Kernel::gaussian(3.0).unwrap(), Kernel::boxcar(7).unwrap()] {
                let a = convolve(&f, &k).unwrap();
                let b = convolve_fft(&f, &k).unwrap();
                let max = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                assert!(max < 1e-8, "fft vs spatial diff {max}");
            }
        }
    }

    #[test]
    fn linearity() {
        let shape = Shape::d2(12, 9);
        let f = random_field(shape, 21);
        let g = random_field(shape, 22);
        let k = Kernel::gaussian(1.5).unwrap();
        let lhs = convolve(&f.zip_map(&g, |a, b| 2.0 * a - 3.0 * b), &k).unwrap();
        let cf = convolve(&f, &k).unwrap();
        let cg = convolve(&g, &k).unwrap();
        for i in 0..shape.len() {
            assert!((lhs.at(i) - (2.0 * cf.at(i) - 3.0 * cg.at(i))).abs() < 1e-10);
        }
    }

    #[test]
    fn self_adjoint_on_interior_support() {
        // Fields supported away from the boundary never see the
        // replication rule, so the operator is symmetric there.
        let shape = Shape::d2(16, 16);
        let k = Kernel::gaussian(1.0).unwrap(); // radius 3
        let margin = k.radius();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut make = |rng: &mut ChaCha8Rng| {
            let mut f = ScalarField::zeros(shape);
            for r in margin..16 - margin {
                for c in margin..16 - margin {
                    f.data_mut()[shape.idx2(r, c)] = rng.gen_range(-1.0..1.0);
                }
            }
            f
        };
        let f = make(&mut rng);
        let g = make(&mut rng);
        let lhs = convolve(&f, &k).unwrap().dot(&g);
        let rhs = f.dot(&convolve(&g, &k).unwrap());
        assert!((lhs - rhs).abs() < 1e-8);
    }

    #[test]
    fn transpose_is_exact_adjoint() {
        for shape in [Shape::d2(11, 9), Shape::d2(5, 30)] {
            let f = random_field(shape, 41);
            let g = random_field(shape, 42);
            for k in [Kernel::gaussian(2.3).unwrap(), Kernel::boxcar(7).unwrap()] {
                let lhs = convolve(&f, &k).unwrap().dot(&g);
                let rhs = f.dot(&convolve_transpose(&g, &k).unwrap());
                assert!(
                    (lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0),
                    "adjoint identity broke: {lhs} vs {rhs}"
                );
            }
        }
        let f3 = random_field(Shape::d3(5, 6, 7), 43);
        let g3 = random_field(Shape::d3(5, 6, 7), 44);
        let k = Kernel::gaussian(1.2).unwrap();
        let lhs = convolve(&f3, &k).unwrap().dot(&g3);
        let rhs = f3.dot(&convolve_transpose(&g3, &k).unwrap());
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn column_mass_is_one_in_the_interior() {
        let k = Kernel::boxcar(5).unwrap(); // radius 2
        let m = column_mass(Shape::d2(12, 12), &k).unwrap();
        let shape = m.shape();
        let total = m.sum();
        assert!((total - 144.0).abs() < 1e-10, "mass not conserved: {total}");
        for r in 2..10 {
            for c in 2..10 {
                assert!((m.at(shape.idx2(r, c)) - 1.0).abs() < 1e-12);
            }
        }
        assert!(m.at(shape.idx2(0, 0)) > 1.0);
    }

    #[test]
    fn rejects_non_finite() {
        let mut f = ScalarField::zeros(Shape::d2(4, 4));
        f.data_mut()[3] = f64::NAN;
        assert!(convolve(&f, &Kernel::boxcar(3).unwrap()).is_err());
    }

    #[test]
    fn parallel_and_sequential_identical() {
        let f = random_field(Shape::d2(33, 29), 77);
        let k = Kernel::gaussian(2.0).unwrap();
        let a = convolve(&f, &k).unwrap();
        let b = exec::run_sequential(|| convolve(&f, &k).unwrap());
        assert_eq!(a.data(), b.data());
    }
}
