//! Parametric coarse-to-fine registration.
//!
//! The displacement field is parametrized by bilinear (trilinear in 3-D)
//! interpolation of knot displacements on an N-spaced control grid.
//! The objective couples an SSD fidelity between the bias-corrected
//! fixed image and the warped moving image, a cross-entropy match
//! between the memberships and the warped atlas, and a Tikhonov penalty
//! on knot differences. Each pyramid level is solved with LBFGS and the
//! knot grid is linearly upsampled to seed the next finer level.

mod energy;
mod grid;
mod lbfgs;
mod pyramid;
mod solve;
mod warp;

pub use energy::{joint_t_energy_grad, tikhonov_energy, TEnergyWeights};
pub use grid::{control_to_field, control_to_field_adjoint, ControlGrid};
pub use lbfgs::{lbfgs_minimize, LbfgsOptions, LbfgsResult, LbfgsStatus};
pub use pyramid::{build_pyramid, build_stack_pyramid, resample_bilinear};
pub use solve::{register, LevelReport, RegisterResult};
pub use warp::{warp, warp_nearest, warp_stack};

use crate::error::{Error, Result};
use crate::field::{ScalarField, Shape};

/// Dense per-pixel displacement, one channel per axis, in pixel units.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    channels: Vec<ScalarField>,
}

impl DisplacementField {
    pub fn zeros(shape: Shape) -> DisplacementField {
        DisplacementField {
            channels: (0..shape.ndim()).map(|_| ScalarField::zeros(shape)).collect(),
        }
    }

    pub fn new(channels: Vec<ScalarField>) -> Result<DisplacementField> {
        let shape = channels[0].shape();
        if channels.len() != shape.ndim() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} channels", shape.ndim()),
                got: format!("{}", channels.len()),
                context: "DisplacementField::new",
            });
        }
        for ch in &channels {
            ch.check_finite("DisplacementField::new")?;
            if ch.shape() != shape {
                return Err(Error::ShapeMismatch {
                    expected: shape.to_string(),
                    got: ch.shape().to_string(),
                    context: "DisplacementField::new",
                });
            }
        }
        Ok(DisplacementField { channels })
    }

    pub fn shape(&self) -> Shape {
        self.channels[0].shape()
    }

    pub fn ndim(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, axis: usize) -> &ScalarField {
        &self.channels[axis]
    }

    pub fn channels(&self) -> &[ScalarField] {
        &self.channels
    }

    /// Largest displacement component magnitude.
    pub fn max_abs(&self) -> f64 {
        self.channels
            .iter()
            .flat_map(|c| c.data().iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

/// Registration configuration.
#[derive(Clone, Debug)]
pub struct RegConfig {
    /// SSD fidelity weight.
    pub zeta: f64,
    /// Tikhonov weight on knot differences.
    pub eta: f64,
    /// Cross-entropy weight.
    pub xi: f64,
    /// Pyramid levels.
    pub levels: usize,
    /// Per-level downscale factor in (0, 1).
    pub downscale: f64,
    /// Knot spacing in pixels.
    pub knot_spacing: usize,
    /// LBFGS iteration cap per level.
    pub m_lbfgs: usize,
    /// LBFGS history length.
    pub lbfgs_memory: usize,
    /// LBFGS stopping tolerance (gradient max-norm and relative energy
    /// change).
    pub grad_tol: f64,
    /// Floor applied to atlas channels before warping.
    pub prior_floor: f64,
}

impl Default for RegConfig {
    fn default() -> RegConfig {
        RegConfig {
            zeta: 1.0,
            eta: 0.01,
            xi: 0.0,
            levels: 8,
            downscale: 0.7,
            knot_spacing: 4,
            m_lbfgs: 100,
            lbfgs_memory: 10,
            grad_tol: 1e-6,
            prior_floor: 1e-8,
        }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.downscale > 0.0 && self.downscale < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "downscale factor must lie in (0,1), got {}",
                self.downscale
            )));
        }
        if self.levels < 1 {
            return Err(Error::InvalidArgument("need at least one pyramid level".into()));
        }
        if self.knot_spacing < 1 {
            return Err(Error::InvalidArgument("knot spacing must be >= 1".into()));
        }
        for (name, v) in [("zeta", self.zeta), ("eta", self.eta), ("xi", self.xi)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}
