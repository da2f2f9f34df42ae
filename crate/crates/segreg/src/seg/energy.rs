//! Segmentation energy evaluation.
//!
//! The smoothness term is evaluated exactly here (the quadratic form,
//! not its linearization), so the descent guarantee of the alternating
//! scheme can be checked against the true objective.

use crate::convolve::convolve;
use crate::energy::EnergyBreakdown;
use crate::error::Result;
use crate::exec;
use crate::field::{ScalarField, SoftSegmentation};
use crate::kernel::Kernel;

use super::update::BetaMoments;
use super::{BiasField, MixtureParams, SegConfig};

const HALF_LN_TWO_PI: f64 = 0.9189385332046727;

/// Full segmentation energy split into its components.
///
/// Returns the localized mixture data/log term, the entropy term, the
/// exact smoothness term and (when a prior is given) the cross-entropy
/// coupling. Registration terms are left zero; the joint driver fills
/// them in.
pub fn segmentation_energy(
    image: &ScalarField,
    u: &SoftSegmentation,
    params: &MixtureParams,
    beta: &BiasField,
    cfg: &SegConfig,
    prior: Option<&[ScalarField]>,
    xi: f64,
) -> Result<EnergyBreakdown> {
    cfg.validate()?;
    let window = cfg.window()?;
    let moments = BetaMoments::compute(beta, &window)?;
    segmentation_energy_with(image, u, params, beta, &moments, cfg, prior, xi, &window)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn segmentation_energy_with(
    image: &ScalarField,
    u: &SoftSegmentation,
    params: &MixtureParams,
    beta: &BiasField,
    moments: &BetaMoments,
    cfg: &SegConfig,
    prior: Option<&[ScalarField]>,
    xi: f64,
    window: &Kernel,
) -> Result<EnergyBreakdown> {
    let n = image.len();
    let img = image.data();
    let (j1, j2) = (moments.j1.data(), moments.j2.data());

    // Window-smoothed log-bias enters once per pixel since the channels
    // sum to one.
    let jlog = convolve(&beta.field().map(f64::ln), window)?;
    let jlogd = jlog.data();
    let mut seg_data = exec::sum(n, |i| jlogd[i]);

    let mut entropy = 0.0;
    for (k, class) in params.classes.iter().enumerate() {
        let uk = u.channel(k).data();
        let log_norm = -class.weight.ln() + HALF_LN_TWO_PI + 0.5 * class.variance.ln();
        let inv_two_var = 1.0 / (2.0 * class.variance);
        let mean = class.mean;
        seg_data += exec::sum(n, |i| {
            let d = img[i] * img[i] * j2[i] - 2.0 * mean * img[i] * j1[i] + mean * mean;
            uk[i] * (d * inv_two_var + log_norm)
        });
        entropy += exec::sum(n, |i| {
            let v = uk[i];
            if v > 0.0 {
                v * v.ln()
            } else {
                0.0
            }
        });
    }
    entropy *= cfg.epsilon;

    let smoothness = cfg.lambda * smoothness_quadratic(u, &cfg.omega)?;

    let cross_entropy = match prior {
        Some(p) if xi > 0.0 => {
            let floor = cfg.prior_floor;
            let mut ce = 0.0;
            for (k, pch) in p.iter().enumerate() {
                let uk = u.channel(k).data();
                let pd = pch.data();
                ce += exec::sum(n, |i| uk[i] * pd[i].max(floor).ln());
            }
            -xi * ce
        }
        _ => 0.0,
    };

    Ok(EnergyBreakdown {
        seg_data,
        entropy,
        smoothness,
        cross_entropy,
        fidelity: 0.0,
        tikhonov: 0.0,
    })
}

/// Exact threshold-dynamics regularizer `sum_k <u_k, omega * (1 - u_k)>`.
pub(crate) fn smoothness_quadratic(u: &SoftSegmentation, omega: &Kernel) -> Result<f64> {
    let n = u.shape().len();
    let mut total = 0.0;
    for ch in u.channels() {
        let conv = convolve(&ch.map(|v| 1.0 - v), omega)?;
        let (a, b) = (ch.data(), conv.data());
        total += exec::sum(n, |i| a[i] * b[i]);
    }
    Ok(total)
}

/// Registration fidelity `zeta/2 * ||image/beta - warped||^2`.
pub(crate) fn fidelity_energy(
    image: &ScalarField,
    beta: &BiasField,
    warped_moving: &ScalarField,
    zeta: f64,
) -> f64 {
    let n = image.len();
    let img = image.data();
    let b = beta.field().data();
    let w = warped_moving.data();
    0.5 * zeta
        * exec::sum(n, |i| {
            let r = img[i] / b[i] - w[i];
            r * r
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{LabelMap, Shape};
    use crate::seg::GaussianClass;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simple_setup() -> (ScalarField, MixtureParams, BiasField, SegConfig) {
        let shape = Shape::d2(8, 8);
        let img = ScalarField::from_fn(shape, |c| if c[1] < 4 { 0.2 } else { 0.8 });
        let params = MixtureParams {
            classes: vec![
                GaussianClass { weight: 0.5, mean: 0.2, variance: 0.01 },
                GaussianClass { weight: 0.5, mean: 0.8, variance: 0.01 },
            ],
        };
        (img.clone(), params, BiasField::uniform(shape), SegConfig::new(2))
    }

    #[test]
    fn uniform_membership_entropy_closed_form() {
        let (img, params, beta, cfg) = simple_setup();
        let k = 2;
        let u = SoftSegmentation::uniform(img.shape(), k);
        let e = segmentation_energy(&img, &u, &params, &beta, &cfg, None, 0.0).unwrap();
        let n = img.len() as f64;
        let expected = cfg.epsilon * n * k as f64 * (1.0 / k as f64) * (1.0 / k as f64).ln();
        assert!((e.entropy - expected).abs() < 1e-9);
    }

    #[test]
    fn one_hot_constant_field_has_zero_smoothness() {
        let (img, params, beta, cfg) = simple_setup();
        let shape = img.shape();
        let u = LabelMap::new(shape, 2, vec![1u32; shape.len()])
            .unwrap()
            .one_hot();
        let e = segmentation_energy(&img, &u, &params, &beta, &cfg, None, 0.0).unwrap();
        assert!(e.smoothness.abs() < 1e-12);
    }

    #[test]
    fn smoothness_matches_brute_double_sum() {
        let shape = Shape::d2(9, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = ScalarField::from_vec(
            shape,
            (0..shape.len()).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let b = a.map(|v| 1.0 - v);
        let u = SoftSegmentation::new(vec![a, b]).unwrap();
        let omega = Kernel::boxcar(5).unwrap();

        let fast = smoothness_quadratic(&u, &omega).unwrap();

        let taps = omega.dense_taps(2);
        let mut brute = 0.0;
        for ch in u.channels() {
            for r in 0..9_isize {
                for c in 0..8_isize {
                    let mut conv = 0.0;
                    for (off, w) in &taps {
                        let rr = (r + off[0]).clamp(0, 8) as usize;
                        let cc = (c + off[1]).clamp(0, 7) as usize;
                        conv += w * (1.0 - ch.at(shape.idx2(rr, cc)));
                    }
                    brute += ch.at(shape.idx2(r as usize, c as usize)) * conv;
                }
            }
        }
        assert!((fast - brute).abs() < 1e-10, "diff {}", (fast - brute).abs());
    }
}
