//! Bias-corrected local Gaussian mixture segmentation.
//!
//! The mixture statistics are localized by a Gaussian window, which makes
//! a per-pixel multiplicative bias estimate available in closed form. The
//! solver alternates a parameter/bias update with a membership update
//! (a regularized E-step with optional atlas priors) and is guaranteed
//! non-increasing in energy.

mod kmeans;
mod lgmm;
mod update;

pub(crate) mod energy;

pub use energy::segmentation_energy;
pub use kmeans::kmeans_init;
pub use lgmm::{lgmm_solve, LgmmResult};
pub use update::{update_memberships, update_mixture_params};

use crate::error::{Error, Result};
use crate::field::{ScalarField, Shape};
use crate::kernel::Kernel;

/// One Gaussian component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianClass {
    /// Mixing weight, in (0, 1].
    pub weight: f64,
    /// Intensity mean.
    pub mean: f64,
    /// Intensity variance, floored away from zero.
    pub variance: f64,
}

/// Mixture parameters for all K classes.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureParams {
    pub classes: Vec<GaussianClass>,
}

impl MixtureParams {
    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self, variance_floor: f64) -> Result<()> {
        let sum: f64 = self.classes.iter().map(|c| c.weight).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "mixture weights sum to {sum}, expected 1"
            )));
        }
        for (k, c) in self.classes.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight <= 1.0 + 1e-12) {
                return Err(Error::InvalidArgument(format!(
                    "class {k} weight {} outside (0,1]",
                    c.weight
                )));
            }
            if c.variance < variance_floor * (1.0 - 1e-12) {
                return Err(Error::InvalidArgument(format!(
                    "class {k} variance {} below floor {variance_floor}",
                    c.variance
                )));
            }
        }
        Ok(())
    }
}

/// Strictly positive multiplicative bias field.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasField {
    field: ScalarField,
}

impl BiasField {
    /// Validate positivity against the given floor.
    pub fn new(field: ScalarField, floor: f64) -> Result<BiasField> {
        field.check_finite("BiasField::new")?;
        if field.data().iter().any(|&v| v < floor) {
            return Err(Error::InvalidArgument(format!(
                "bias field dips below the floor {floor}"
            )));
        }
        Ok(BiasField { field })
    }

    /// The constant unit bias.
    pub fn uniform(shape: Shape) -> BiasField {
        BiasField { field: ScalarField::constant(shape, 1.0) }
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn shape(&self) -> Shape {
        self.field.shape()
    }

    /// The intensity-corrected image `image / beta`.
    pub fn correct(&self, image: &ScalarField) -> ScalarField {
        image.zip_map(&self.field, |i, b| i / b)
    }
}

/// Segmentation solver configuration.
#[derive(Clone, Debug)]
pub struct SegConfig {
    /// Class count K >= 2.
    pub k: usize,
    /// Width of the localizing Gaussian window, in pixels.
    pub sigma: f64,
    /// Entropy weight.
    pub epsilon: f64,
    /// Smoothness weight on the threshold-dynamics regularizer.
    pub lambda: f64,
    /// Regularizer kernel.
    pub omega: Kernel,
    /// Fidelity weight entering the bias update in joint mode.
    pub zeta: f64,
    /// Maximum inner alternations.
    pub m_lgmm: usize,
    /// Early-stop threshold on the relative energy change.
    pub tol: f64,
    pub variance_floor: f64,
    pub weight_floor: f64,
    pub beta_floor: f64,
    pub prior_floor: f64,
    /// When false the bias field stays frozen at its input value, which
    /// gives the plain (or regularized-only) mixture regimes.
    pub estimate_bias: bool,
}

impl SegConfig {
    pub fn new(k: usize) -> SegConfig {
        SegConfig {
            k,
            sigma: 20.0,
            epsilon: 1.0,
            lambda: 0.005,
            omega: Kernel::boxcar(7).expect("odd side"),
            zeta: 1.0,
            m_lgmm: 100,
            tol: 1e-5,
            variance_floor: 1e-6,
            weight_floor: 1e-8,
            beta_floor: 1e-3,
            prior_floor: 1e-8,
            estimate_bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidArgument(format!("K must be >= 2, got {}", self.k)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument("sigma must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidArgument("epsilon must be positive".into()));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("zeta", self.zeta),
            ("variance_floor", self.variance_floor),
            ("weight_floor", self.weight_floor),
            ("beta_floor", self.beta_floor),
            ("prior_floor", self.prior_floor),
            ("tol", self.tol),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// The localizing window as a kernel.
    pub fn window(&self) -> Result<Kernel> {
        Kernel::gaussian(self.sigma)
    }
}
