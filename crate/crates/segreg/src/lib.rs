//! Joint variational image segmentation and parametric registration.
//!
//! The segmentation side is a Gaussian mixture with kernel-localized
//! statistics (which yields a multiplicative bias-field estimate), an
//! entropy barrier on the soft memberships and a threshold-dynamics
//! smoothness term. The registration side warps an atlas onto the image
//! through a control-grid displacement solved coarse-to-fine with LBFGS.
//! A cross-entropy term couples the two: the warped atlas acts as an
//! adaptive spatial prior for the memberships, and the memberships steer
//! the registration in return.
//!
//! Entry points:
//! - [`seg::lgmm_solve`] — bias-corrected mixture segmentation alone,
//! - [`reg::register`] — coarse-to-fine registration alone,
//! - [`joint::joint_solve`] — the full alternation,
//! - [`phantom::make_pair`] — deterministic synthetic test pairs,
//! - [`metrics`] — Jaccard / Dice / surface-distance evaluation.
//!
//! Hot per-pixel loops run on rayon when the `parallel` feature (on by
//! default) is enabled; results are bit-identical to the sequential
//! fallback for any thread count.

pub mod convolve;
pub mod energy;
pub mod error;
pub mod exec;
pub mod field;
pub mod io;
pub mod joint;
pub mod kernel;
pub mod metrics;
pub mod phantom;
pub mod reg;
pub mod seg;
pub mod viz;

pub use convolve::{convolve, convolve_fft};
pub use energy::EnergyBreakdown;
pub use error::{Error, Result};
pub use field::{argmax_label, normalize_intensity, LabelMap, ScalarField, Shape, SoftSegmentation};
pub use kernel::{Kernel, KernelKind};
