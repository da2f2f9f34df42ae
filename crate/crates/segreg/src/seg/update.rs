//! Closed-form parameter and membership updates.
//!
//! Both updates share the window-smoothed bias moments
//! `j1 = G * (1/beta)` and `j2 = G * (1/beta^2)`: the localized squared
//! residual at pixel x collapses to
//! `d_k(x) = I(x)^2 j2(x) - 2 c_k I(x) j1(x) + c_k^2`.

use crate::convolve::{column_mass, convolve, convolve_transpose};
use crate::error::{Error, Result};
use crate::exec;
use crate::field::{ScalarField, SoftSegmentation};
use crate::kernel::Kernel;

use super::{BiasField, GaussianClass, MixtureParams, SegConfig};

/// Window-smoothed reciprocal-bias moments.
pub(crate) struct BetaMoments {
    pub j1: ScalarField,
    pub j2: ScalarField,
}

impl BetaMoments {
    pub fn compute(beta: &BiasField, window: &Kernel) -> Result<BetaMoments> {
        let inv = beta.field().map(|b| 1.0 / b);
        let inv2 = beta.field().map(|b| 1.0 / (b * b));
        Ok(BetaMoments { j1: convolve(&inv, window)?, j2: convolve(&inv2, window)? })
    }
}

/// Mixture weight, mean, variance and bias update for fixed memberships.
///
/// `warped_moving` must be present exactly when the registration
/// fidelity couples into the bias estimate (joint mode); without it the
/// coupling weight is treated as zero. `prev` supplies parameters to
/// retain for classes whose membership mass has vanished.
pub fn update_mixture_params(
    image: &ScalarField,
    u: &SoftSegmentation,
    beta_prev: &BiasField,
    warped_moving: Option<&ScalarField>,
    prev: Option<&MixtureParams>,
    cfg: &SegConfig,
) -> Result<(MixtureParams, BiasField)> {
    cfg.validate()?;
    check_same_shape(image, u, beta_prev)?;
    let window = cfg.window()?;
    let moments = BetaMoments::compute(beta_prev, &window)?;
    update_mixture_params_with(image, u, beta_prev, &moments, warped_moving, prev, cfg, &window)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn update_mixture_params_with(
    image: &ScalarField,
    u: &SoftSegmentation,
    beta_prev: &BiasField,
    moments: &BetaMoments,
    warped_moving: Option<&ScalarField>,
    prev: Option<&MixtureParams>,
    cfg: &SegConfig,
    window: &Kernel,
) -> Result<(MixtureParams, BiasField)> {
    let n = image.len();
    let n_f = n as f64;
    let img = image.data();
    let (j1, j2) = (moments.j1.data(), moments.j2.data());

    let mut classes = Vec::with_capacity(u.k());
    let mass_floor = 1e-12 * n_f;
    for k in 0..u.k() {
        let uk = u.channel(k).data();
        let mass = exec::sum(n, |i| uk[i]);
        if mass <= mass_floor {
            log::warn!("class {k} is empty; retaining previous parameters");
            let (mean, variance) = match prev {
                Some(p) => (p.classes[k].mean, p.classes[k].variance),
                None => (exec::sum(n, |i| img[i] * j1[i]) / n_f, cfg.variance_floor),
            };
            classes.push(GaussianClass {
                weight: cfg.weight_floor,
                mean,
                variance: variance.max(cfg.variance_floor),
            });
            continue;
        }
        let weight = mass / n_f;
        let mean = exec::sum(n, |i| uk[i] * img[i] * j1[i]) / mass;
        let resid = exec::sum(n, |i| {
            uk[i] * (img[i] * img[i] * j2[i] - 2.0 * mean * img[i] * j1[i] + mean * mean)
        });
        let variance = (resid.max(0.0) / mass).max(cfg.variance_floor);
        classes.push(GaussianClass { weight, mean, variance });
    }
    // Flooring empty classes perturbs the weight sum; rescale.
    let wsum: f64 = classes.iter().map(|c| c.weight).sum();
    for c in &mut classes {
        c.weight /= wsum;
        c.weight = c.weight.max(cfg.weight_floor);
    }
    let params = MixtureParams { classes };

    let beta = if cfg.estimate_bias {
        update_bias(image, u, &params, warped_moving, cfg, window)?
    } else {
        beta_prev.clone()
    };
    Ok((params, beta))
}

/// Positive root of the per-pixel quadratic stationarity condition for
/// the bias.
///
/// The moments `s` and `v` gather membership-weighted image mass through
/// the transpose of the replicated window (the energy differentiates
/// with respect to the smoothed side), and the logarithmic term carries
/// the window's column mass `w`, which is one away from the boundary.
/// There the root reduces to
/// `beta = (-(s+p) + sqrt((s+p)^2 + 4(v + zeta I^2))) / 2`.
fn update_bias(
    image: &ScalarField,
    u: &SoftSegmentation,
    params: &MixtureParams,
    warped_moving: Option<&ScalarField>,
    cfg: &SegConfig,
    window: &Kernel,
) -> Result<BiasField> {
    let n = image.len();
    let img = image.data();
    // Coupling is active only when a warped moving image exists.
    let zeta = if warped_moving.is_some() { cfg.zeta } else { 0.0 };

    let mut s_field = vec![0.0; n];
    let mut v_field = vec![0.0; n];
    for (k, class) in params.classes.iter().enumerate() {
        let uk = u.channel(k).data();
        let iu = ScalarField::from_vec(image.shape(), (0..n).map(|i| img[i] * uk[i]).collect())?;
        let iiu =
            ScalarField::from_vec(image.shape(), (0..n).map(|i| img[i] * img[i] * uk[i]).collect())?;
        let ciu = convolve_transpose(&iu, window)?;
        let ciiu = convolve_transpose(&iiu, window)?;
        let (cs, cv) = (ciu.data(), ciiu.data());
        let (cm, var) = (class.mean, class.variance);
        exec::fill_chunks(&mut s_field, |start, chunk| {
            for (j, v) in chunk.iter_mut().enumerate() {
                *v += cm / var * cs[start + j];
            }
        });
        exec::fill_chunks(&mut v_field, |start, chunk| {
            for (j, v) in chunk.iter_mut().enumerate() {
                *v += 1.0 / var * cv[start + j];
            }
        });
    }
    let wmass = column_mass(image.shape(), window)?;
    let wm = wmass.data();

    let mut beta = ScalarField::zeros(image.shape());
    let warped = warped_moving.map(|w| w.data());
    let floor = cfg.beta_floor;
    exec::fill(beta.data_mut(), |i| {
        let p = match warped {
            Some(w) => zeta * img[i] * w[i],
            None => 0.0,
        };
        let b = s_field[i] + p;
        let a4 = 4.0 * (v_field[i] + zeta * img[i] * img[i]);
        let root = (-b + (b * b + a4 * wm[i]).sqrt()) / (2.0 * wm[i]);
        root.max(floor)
    });
    BiasField::new(beta, floor)
}

/// Regularized E-step: closed-form membership update with optional
/// per-class spatial priors.
///
/// All per-pixel factors are assembled in log space and normalized with
/// max subtraction, so the result is a valid simplex point even when the
/// raw factors underflow. `prior`, when present, holds one channel per
/// segmentation class (a grouped prior repeats its group's map on every
/// member class); channels are floored before the logarithm.
pub fn update_memberships(
    image: &ScalarField,
    params: &MixtureParams,
    beta: &BiasField,
    u_prev: &SoftSegmentation,
    prior: Option<&[ScalarField]>,
    cfg: &SegConfig,
    xi: f64,
) -> Result<SoftSegmentation> {
    cfg.validate()?;
    check_same_shape(image, u_prev, beta)?;
    let window = cfg.window()?;
    let moments = BetaMoments::compute(beta, &window)?;
    update_memberships_with(image, params, &moments, u_prev, prior, cfg, xi)
}

pub(crate) fn update_memberships_with(
    image: &ScalarField,
    params: &MixtureParams,
    moments: &BetaMoments,
    u_prev: &SoftSegmentation,
    prior: Option<&[ScalarField]>,
    cfg: &SegConfig,
    xi: f64,
) -> Result<SoftSegmentation> {
    let k = params.k();
    if u_prev.k() != k {
        return Err(Error::ShapeMismatch {
            expected: format!("{k} channels"),
            got: format!("{}", u_prev.k()),
            context: "update_memberships",
        });
    }
    if let Some(p) = prior {
        if p.len() != k {
            return Err(Error::ShapeMismatch {
                expected: format!("{k} prior channels"),
                got: format!("{}", p.len()),
                context: "update_memberships",
            });
        }
    }
    let n = image.len();
    let img = image.data();
    let (j1, j2) = (moments.j1.data(), moments.j2.data());
    let eps = cfg.epsilon;

    // log q_k per channel
    let mut logq: Vec<Vec<f64>> = Vec::with_capacity(k);
    for (c, class) in params.classes.iter().enumerate() {
        // Linearized smoothness term through the symmetrized operator;
        // identical to `omega * (1 - 2 u)` away from the boundary.
        let arg = u_prev.channel(c).map(|v| 1.0 - 2.0 * v);
        let lin = convolve(&arg, &cfg.omega)?
            .zip_map(&convolve_transpose(&arg, &cfg.omega)?, |a, b| 0.5 * (a + b))
            .into_data();
        let const_term = (class.weight.ln() - 0.5 * class.variance.ln()) / eps;
        let inv_two_eps_var = 1.0 / (2.0 * eps * class.variance);
        let (mean, lambda) = (class.mean, cfg.lambda);
        let pch = prior.map(|p| p[c].data());
        let (pfloor, xi_eps) = (cfg.prior_floor, xi / eps);

        let mut out = vec![0.0; n];
        exec::fill(&mut out, |i| {
            let d = img[i] * img[i] * j2[i] - 2.0 * mean * img[i] * j1[i] + mean * mean;
            let mut v = const_term - d * inv_two_eps_var - lambda / eps * lin[i];
            if xi > 0.0 {
                if let Some(p) = pch {
                    v += xi_eps * p[i].max(pfloor).ln();
                }
            }
            v
        });
        logq.push(out);
    }

    // Max-subtracted softmax across channels.
    let mut maxes = vec![0.0; n];
    {
        let logq = &logq;
        exec::fill(&mut maxes, |i| {
            let mut m = logq[0][i];
            for ch in logq.iter().skip(1) {
                m = m.max(ch[i]);
            }
            m
        });
    }
    let mut sums = vec![0.0; n];
    for ch in &mut logq {
        let chd: &mut [f64] = ch;
        let maxes = &maxes;
        exec::fill_chunks(chd, |start, chunk| {
            for (j, v) in chunk.iter_mut().enumerate() {
                *v = (*v - maxes[start + j]).exp();
            }
        });
        let chd: &[f64] = ch;
        exec::fill_chunks(&mut sums, |start, chunk| {
            for (j, v) in chunk.iter_mut().enumerate() {
                *v += chd[start + j];
            }
        });
    }
    let channels = logq
        .into_iter()
        .map(|mut ch| {
            let sums = &sums;
            exec::fill_chunks(&mut ch, |start, chunk| {
                for (j, v) in chunk.iter_mut().enumerate() {
                    *v /= sums[start + j];
                }
            });
            ScalarField::from_vec(image.shape(), ch)
        })
        .collect::<Result<Vec<_>>>()?;
    SoftSegmentation::new(channels)
}

fn check_same_shape(
    image: &ScalarField,
    u: &SoftSegmentation,
    beta: &BiasField,
) -> Result<()> {
    if image.shape() != u.shape() || image.shape() != beta.shape() {
        return Err(Error::ShapeMismatch {
            expected: image.shape().to_string(),
            got: format!("u {} / beta {}", u.shape(), beta.shape()),
            context: "segmentation update",
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{LabelMap, Shape};

    fn piecewise_image() -> (ScalarField, SoftSegmentation) {
        let shape = Shape::d2(8, 8);
        let mut data = vec![0.2; shape.len()];
        let mut ids = vec![0u32; shape.len()];
        for r in 0..8 {
            for c in 4..8 {
                data[shape.idx2(r, c)] = 0.8;
                ids[shape.idx2(r, c)] = 1;
            }
        }
        let img = ScalarField::from_vec(shape, data).unwrap();
        let u = LabelMap::new(shape, 2, ids).unwrap().one_hot();
        (img, u)
    }

    #[test]
    fn exact_mixture_on_noiseless_regions() {
        let (img, u) = piecewise_image();
        let mut cfg = SegConfig::new(2);
        cfg.zeta = 0.0;
        let beta = BiasField::uniform(img.shape());
        let (params, new_beta) =
            update_mixture_params(&img, &u, &beta, None, None, &cfg).unwrap();
        // With beta = 1, j1 = j2 = 1 so means equal region intensities and
        // variances collapse to the floor.
        assert!((params.classes[0].mean - 0.2).abs() < 1e-12);
        assert!((params.classes[1].mean - 0.8).abs() < 1e-12);
        assert_eq!(params.classes[0].variance, cfg.variance_floor);
        assert_eq!(params.classes[1].variance, cfg.variance_floor);
        assert!((params.classes[0].weight - 0.5).abs() < 1e-12);
        assert!((params.classes[1].weight - 0.5).abs() < 1e-12);
        assert!(new_beta.field().data().iter().all(|&b| b >= cfg.beta_floor));
    }

    #[test]
    fn uniform_memberships_share_statistics() {
        let (img, _) = piecewise_image();
        let cfg = SegConfig::new(3);
        let u = SoftSegmentation::uniform(img.shape(), 3);
        let beta = BiasField::uniform(img.shape());
        let (params, _) = update_mixture_params(&img, &u, &beta, None, None, &cfg).unwrap();
        for c in &params.classes {
            assert!((c.weight - 1.0 / 3.0).abs() < 1e-12);
            assert!((c.mean - params.classes[0].mean).abs() < 1e-12);
        }
    }

    #[test]
    fn memberships_land_on_simplex() {
        let (img, u0) = piecewise_image();
        let cfg = SegConfig::new(2);
        let beta = BiasField::uniform(img.shape());
        let (params, beta) = update_mixture_params(&img, &u0, &beta, None, None, &cfg).unwrap();
        let u = update_memberships(&img, &params, &beta, &u0, None, &cfg, 0.0).unwrap();
        for i in 0..img.len() {
            let sum: f64 = (0..2).map(|k| u.channel(k).at(i)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_likelihood_pins_membership() {
        // Well-separated means, identity-like window (tiny sigma), no
        // smoothing: a pixel sitting exactly on a mean gets > 0.99.
        let shape = Shape::d2(4, 4);
        let mut data = vec![0.9; shape.len()];
        data[5] = 0.1;
        let img = ScalarField::from_vec(shape, data).unwrap();
        let mut cfg = SegConfig::new(2);
        cfg.sigma = 1e-3;
        cfg.lambda = 0.0;
        let params = MixtureParams {
            classes: vec![
                GaussianClass { weight: 0.5, mean: 0.1, variance: 1e-3 },
                GaussianClass { weight: 0.5, mean: 0.9, variance: 1e-3 },
            ],
        };
        let beta = BiasField::uniform(shape);
        let u0 = SoftSegmentation::uniform(shape, 2);
        let u = update_memberships(&img, &params, &beta, &u0, None, &cfg, 0.0).unwrap();
        assert!(u.channel(0).at(5) > 0.99);
        assert!(u.channel(1).at(0) > 0.99);
    }

    #[test]
    fn strong_prior_dominates() {
        let (img, u0) = piecewise_image();
        let mut cfg = SegConfig::new(2);
        cfg.lambda = 0.0;
        let params = MixtureParams {
            classes: vec![
                GaussianClass { weight: 0.5, mean: 0.2, variance: 0.01 },
                GaussianClass { weight: 0.5, mean: 0.8, variance: 0.01 },
            ],
        };
        let beta = BiasField::uniform(img.shape());
        // Binary prior opposite to the intensity evidence.
        let shape = img.shape();
        let p1 = ScalarField::from_fn(shape, |c| if c[1] < 4 { 1.0 } else { 0.0 });
        let p0 = p1.map(|v| 1.0 - v);
        let prior = [p1.clone(), p0.clone()];
        let u = update_memberships(&img, &params, &beta, &u0, Some(&prior), &cfg, 1e3).unwrap();
        let mut max_diff = 0.0f64;
        for i in 0..shape.len() {
            max_diff = max_diff.max((u.channel(0).at(i) - prior[0].at(i)).abs());
            max_diff = max_diff.max((u.channel(1).at(i) - prior[1].at(i)).abs());
        }
        assert!(max_diff < 1e-3, "prior-dominated limit diff {max_diff}");
    }

    #[test]
    fn intensity_scale_cancels_against_bias() {
        // kappa * image with kappa * beta gives the identical membership
        // update; kappa = 2 keeps the float scaling exact.
        let (img, u0) = piecewise_image();
        let mut cfg = SegConfig::new(2);
        cfg.estimate_bias = false;
        let beta1 = BiasField::uniform(img.shape());
        let (params1, b1) = update_mixture_params(&img, &u0, &beta1, None, None, &cfg).unwrap();
        let u1 = update_memberships(&img, &params1, &b1, &u0, None, &cfg, 0.0).unwrap();

        let img2 = img.map(|v| 2.0 * v);
        let beta2 = BiasField::new(ScalarField::constant(img.shape(), 2.0), 1e-3).unwrap();
        let (params2, b2) = update_mixture_params(&img2, &u0, &beta2, None, None, &cfg).unwrap();
        for (a, b) in params1.classes.iter().zip(&params2.classes) {
            assert!((a.mean - b.mean).abs() < 1e-14);
            assert!((a.variance - b.variance).abs() < 1e-14);
        }
        let u2 = update_memberships(&img2, &params2, &b2, &u0, None, &cfg, 0.0).unwrap();
        for k in 0..2 {
            for i in 0..img.len() {
                assert!((u1.channel(k).at(i) - u2.channel(k).at(i)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn bias_root_respects_floor_and_positivity() {
        let (img, u) = piecewise_image();
        let mut cfg = SegConfig::new(2);
        cfg.zeta = 1.0;
        let beta = BiasField::uniform(img.shape());
        let warped = img.map(|v| v * 0.9);
        let (_, new_beta) =
            update_mixture_params(&img, &u, &beta, Some(&warped), None, &cfg).unwrap();
        assert!(new_beta.field().data().iter().all(|&b| b >= cfg.beta_floor));
    }
}
