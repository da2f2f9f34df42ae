//! The T-subproblem: energy and exact knot gradient.
//!
//! For knot displacements D with dense field T = P D, the objective is
//!
//! ```text
//! E(D) = -xi  * sum_x sum_k u_k(x) log( s_k(x+T) / sum_l s_l(x+T) )
//!        + zeta/2 * sum_x ( fc(x) - m(x+T) )^2
//!        + eta/2  * Tik(D)
//! ```
//!
//! with fc the bias-corrected fixed image and m the moving image. The
//! image-space gradient uses the exact in-cell derivative of the
//! multilinear interpolant, so the analytic knot gradient (chained
//! through the adjoint of P) matches central finite differences of this
//! energy to round-off away from cell crossings.

use crate::energy::EnergyBreakdown;
use crate::error::{Error, Result};
use crate::exec;
use crate::field::{ScalarField, SoftSegmentation};

use super::grid::{control_to_field, control_to_field_adjoint, ControlGrid};
use super::warp::sample_linear_grad;
use super::DisplacementField;

/// Term weights for the T-subproblem.
#[derive(Clone, Copy, Debug)]
pub struct TEnergyWeights {
    pub xi: f64,
    pub zeta: f64,
    pub eta: f64,
}

/// Tikhonov quadratic on knot forward differences, scaled by
/// `spacing^(d-2)` so it discretizes the squared displacement gradient.
pub fn tikhonov_energy(grid: &ControlGrid) -> f64 {
    let lat = grid.lattice();
    let ndim = grid.ndim();
    let nk = lat.len();
    let scale = (grid.spacing() as f64).powi(ndim as i32 - 2);
    let mut total = 0.0;
    for comp in 0..ndim {
        let ch = &grid.data()[comp * nk..(comp + 1) * nk];
        for idx in 0..nk {
            let c = lat.coords(idx);
            for a in 0..ndim {
                if c[a] + 1 < lat.dim(a) {
                    let mut cc = c;
                    cc[a] += 1;
                    let d = ch[lat.index_of(&cc[..ndim])] - ch[idx];
                    total += d * d;
                }
            }
        }
    }
    scale * total
}

fn tikhonov_grad_into(grid: &ControlGrid, eta: f64, grad: &mut [f64]) {
    let lat = grid.lattice();
    let ndim = grid.ndim();
    let nk = lat.len();
    let scale = (grid.spacing() as f64).powi(ndim as i32 - 2);
    for comp in 0..ndim {
        let ch = &grid.data()[comp * nk..(comp + 1) * nk];
        let gch = &mut grad[comp * nk..(comp + 1) * nk];
        for idx in 0..nk {
            let c = lat.coords(idx);
            let mut acc = 0.0;
            for a in 0..ndim {
                if c[a] + 1 < lat.dim(a) {
                    let mut cc = c;
                    cc[a] += 1;
                    acc -= ch[lat.index_of(&cc[..ndim])] - ch[idx];
                }
                if c[a] > 0 {
                    let mut cc = c;
                    cc[a] -= 1;
                    acc += ch[idx] - ch[lat.index_of(&cc[..ndim])];
                }
            }
            gch[idx] += eta * scale * acc;
        }
    }
}

/// Energy and knot gradient of the T-subproblem.
///
/// `atlas` and `memberships` must share the image shape and channel
/// count; they are only sampled when `xi > 0`. Atlas channels must be
/// strictly positive (floor them before calling). Non-finite terms are
/// reported as hard errors naming the term.
pub fn joint_t_energy_grad(
    grid: &ControlGrid,
    fixed_corrected: &ScalarField,
    moving: &ScalarField,
    atlas: &SoftSegmentation,
    memberships: &SoftSegmentation,
    w: &TEnergyWeights,
) -> Result<(EnergyBreakdown, Vec<f64>)> {
    let shape = fixed_corrected.shape();
    if moving.shape() != shape
        || grid.image_shape() != shape
        || (w.xi > 0.0 && (atlas.shape() != shape || memberships.shape() != shape))
    {
        return Err(Error::ShapeMismatch {
            expected: shape.to_string(),
            got: "mismatched registration inputs".into(),
            context: "joint_t_energy_grad",
        });
    }
    if w.xi > 0.0 && atlas.k() != memberships.k() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} atlas channels", memberships.k()),
            got: format!("{}", atlas.k()),
            context: "joint_t_energy_grad",
        });
    }

    let t = control_to_field(grid);
    let ndim = shape.ndim();
    let n = shape.len();
    let k = atlas.k();
    let fc = fixed_corrected.data();
    let tch: Vec<&[f64]> = t.channels().iter().map(|c| c.data()).collect();
    let uch: Vec<&[f64]> = memberships.channels().iter().map(|c| c.data()).collect();

    // One packed row per pixel: [grad_axis.., e_fid, e_ce]
    let row = ndim + 2;
    let mut packed = vec![0.0f64; n * row];
    let (xi, zeta) = (w.xi, w.zeta);
    exec::fill_rows(&mut packed, row, |idx, out| {
        let c = shape.coords(idx);
        let mut p = [0.0f64; 3];
        for a in 0..ndim {
            p[a] = c[a] as f64 + tch[a][idx];
        }
        let mut gvec = [0.0f64; 3];
        let mut e_fid = 0.0;
        let mut e_ce = 0.0;

        if zeta > 0.0 {
            let mut mg = [0.0f64; 3];
            let mval = sample_linear_grad(moving, &p, &mut mg);
            let resid = fc[idx] - mval;
            e_fid = 0.5 * zeta * resid * resid;
            let coef = zeta * (mval - fc[idx]);
            for a in 0..ndim {
                gvec[a] += coef * mg[a];
            }
        }
        if xi > 0.0 {
            let mut sg = [0.0f64; 3];
            let mut sum_val = 0.0;
            let mut sum_grad = [0.0f64; 3];
            let mut dot_ulog = 0.0;
            let mut gat = [0.0f64; 3];
            for ch in 0..k {
                let sval = sample_linear_grad(atlas.channel(ch), &p, &mut sg);
                let u_val = uch[ch][idx];
                sum_val += sval;
                dot_ulog += u_val * sval.ln();
                for a in 0..ndim {
                    sum_grad[a] += sg[a];
                    gat[a] += u_val * sg[a] / sval;
                }
            }
            // memberships sum to one, so log(sum) enters once
            e_ce = -xi * (dot_ulog - sum_val.ln());
            for a in 0..ndim {
                gvec[a] += -xi * gat[a] + xi * sum_grad[a] / sum_val;
            }
        }
        for a in 0..ndim {
            out[a] = gvec[a];
        }
        out[ndim] = e_fid;
        out[ndim + 1] = e_ce;
    });

    let fidelity = exec::sum(n, |i| packed[i * row + ndim]);
    let cross_entropy = exec::sum(n, |i| packed[i * row + ndim + 1]);
    let tikhonov = 0.5 * w.eta * tikhonov_energy(grid);
    for (name, v) in [
        ("fidelity", fidelity),
        ("cross-entropy", cross_entropy),
        ("tikhonov", tikhonov),
    ] {
        if !v.is_finite() {
            return Err(Error::Numerical { term: "registration energy", detail: format!("{name} term is not finite") });
        }
    }

    // Chain the per-pixel gradient through the parametrization adjoint.
    let gfield = DisplacementField::new(
        (0..ndim)
            .map(|a| {
                let mut ch = ScalarField::zeros(shape);
                let packed = &packed;
                exec::fill(ch.data_mut(), |i| packed[i * row + a]);
                Ok(ch)
            })
            .collect::<Result<Vec<_>>>()?,
    )?;
    let mut grad = control_to_field_adjoint(grid, &gfield);
    tikhonov_grad_into(grid, w.eta, &mut grad);
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            term: "registration gradient",
            detail: "non-finite knot gradient".into(),
        });
    }

    let e = EnergyBreakdown {
        seg_data: 0.0,
        entropy: 0.0,
        smoothness: 0.0,
        cross_entropy,
        fidelity,
        tikhonov,
    };
    Ok((e, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convolve::convolve;
    use crate::field::Shape;
    use crate::kernel::Kernel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_field(shape: Shape, seed: u64, lo: f64, hi: f64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = ScalarField::from_vec(
            shape,
            (0..shape.len()).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let sm = convolve(&raw, &Kernel::gaussian(2.0).unwrap()).unwrap();
        let (mn, mx) = sm.min_max();
        sm.map(|v| lo + (v - mn) / (mx - mn) * (hi - lo))
    }

    fn smooth_stack(shape: Shape, k: usize, seed: u64) -> SoftSegmentation {
        let channels: Vec<ScalarField> =
            (0..k).map(|i| smooth_field(shape, seed + i as u64, 0.05, 1.0)).collect();
        SoftSegmentation::from_unnormalized(channels).unwrap()
    }

    #[test]
    fn perfect_alignment_zero_energy_and_gradient() {
        let shape = Shape::d2(20, 20);
        let img = smooth_field(shape, 5, 0.0, 1.0);
        let grid = ControlGrid::zeros(shape, 4);
        let atlas = smooth_stack(shape, 2, 50);
        let u = smooth_stack(shape, 2, 60);
        let w = TEnergyWeights { xi: 0.0, zeta: 1.0, eta: 0.0 };
        let (e, g) = joint_t_energy_grad(&grid, &img, &img, &atlas, &u, &w).unwrap();
        assert_eq!(e.total(), 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flat_prior_has_zero_ce_gradient() {
        let shape = Shape::d2(16, 16);
        let fixed = smooth_field(shape, 7, 0.0, 1.0);
        let moving = smooth_field(shape, 8, 0.0, 1.0);
        let atlas = SoftSegmentation::uniform(shape, 3);
        let u = smooth_stack(shape, 3, 70);
        let mut grid = ControlGrid::zeros(shape, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for v in grid.data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
        let w = TEnergyWeights { xi: 0.7, zeta: 0.0, eta: 0.0 };
        let (e, g) = joint_t_energy_grad(&grid, &fixed, &moving, &atlas, &u, &w).unwrap();
        // E_CE is constant in D for a flat prior: gradient vanishes.
        let expected = 0.7 * (shape.len() as f64) * (3.0f64).ln();
        assert!((e.cross_entropy - expected).abs() < 1e-9);
        assert!(g.iter().all(|&v| v.abs() < 1e-12), "max {}", g.iter().fold(0.0f64, |m, &v| m.max(v.abs())));
    }

    #[test]
    fn knot_gradient_matches_finite_differences() {
        let shape = Shape::d2(24, 24);
        let fixed = smooth_field(shape, 21, 0.0, 1.0);
        let moving = smooth_field(shape, 22, 0.0, 1.0);
        let atlas = smooth_stack(shape, 3, 23);
        let u = smooth_stack(shape, 3, 27);
        let mut grid = ControlGrid::zeros(shape, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for v in grid.data_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
        let w = TEnergyWeights { xi: 0.3, zeta: 1.0, eta: 0.2 };
        let (_, g) = joint_t_energy_grad(&grid, &fixed, &moving, &atlas, &u, &w).unwrap();

        let h = 1e-4;
        let gmax = g.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-12);
        let mut worst = 0.0f64;
        for i in 0..grid.data().len() {
            let mut gp = grid.clone();
            gp.data_mut()[i] += h;
            let (ep, _) = joint_t_energy_grad(&gp, &fixed, &moving, &atlas, &u, &w).unwrap();
            let mut gm = grid.clone();
            gm.data_mut()[i] -= h;
            let (em, _) = joint_t_energy_grad(&gm, &fixed, &moving, &atlas, &u, &w).unwrap();
            let fd = (ep.total() - em.total()) / (2.0 * h);
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-3 * gmax);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn tikhonov_gradient_consistent() {
        let shape = Shape::d2(20, 20);
        let mut grid = ControlGrid::zeros(shape, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for v in grid.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let eta = 0.37;
        let mut grad = vec![0.0; grid.data().len()];
        tikhonov_grad_into(&grid, eta, &mut grad);
        let h = 1e-6;
        for i in (0..grid.data().len()).step_by(7) {
            let mut gp = grid.clone();
            gp.data_mut()[i] += h;
            let mut gm = grid.clone();
            gm.data_mut()[i] -= h;
            let fd = 0.5 * eta * (tikhonov_energy(&gp) - tikhonov_energy(&gm)) / (2.0 * h);
            assert!((grad[i] - fd).abs() < 1e-6, "{} vs {fd}", grad[i]);
        }
    }
}
