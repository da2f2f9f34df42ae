//! Gaussian pyramid for coarse-to-fine registration.

use crate::convolve::convolve;
use crate::error::{Error, Result};
use crate::exec;
use crate::field::{ScalarField, Shape, SoftSegmentation};
use crate::kernel::Kernel;

use super::warp::sample_linear;

/// Bilinear resampling to a new shape, pixel-center aligned.
pub fn resample_bilinear(f: &ScalarField, new_shape: Shape) -> Result<ScalarField> {
    let old = f.shape();
    if old.ndim() != new_shape.ndim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} dims", old.ndim()),
            got: format!("{}", new_shape.ndim()),
            context: "resample_bilinear",
        });
    }
    if old == new_shape {
        return Ok(f.clone());
    }
    let ndim = old.ndim();
    let mut ratio = [1.0f64; 3];
    for a in 0..ndim {
        ratio[a] = old.dim(a) as f64 / new_shape.dim(a) as f64;
    }
    let mut out = ScalarField::zeros(new_shape);
    exec::fill(out.data_mut(), |idx| {
        let c = new_shape.coords(idx);
        let mut p = [0.0f64; 3];
        for a in 0..ndim {
            p[a] = (c[a] as f64 + 0.5) * ratio[a] - 0.5;
        }
        sample_linear(f, &p)
    });
    Ok(out)
}

/// Level shapes `ceil(dims * factor^j)`, truncated so every side stays
/// at least 4 pixels.
pub(crate) fn level_shapes(shape: Shape, levels: usize, factor: f64) -> Vec<Shape> {
    let mut out = Vec::with_capacity(levels);
    for j in 0..levels {
        let scale = factor.powi(j as i32);
        let dims: Vec<usize> = shape
            .dims()
            .iter()
            .map(|&n| (n as f64 * scale).ceil() as usize)
            .collect();
        if j > 0 && dims.iter().any(|&n| n < 4) {
            log::warn!(
                "pyramid truncated to {} levels (coarsest side would drop below 4 px)",
                out.len()
            );
            break;
        }
        out.push(Shape::from_dims(&dims).expect("level dims"));
    }
    out
}

/// Gaussian pyramid: `out[0]` is the input, each next level is
/// pre-smoothed and bilinearly resampled by `factor`.
///
/// The pre-smoothing width is `0.5 * sqrt(1/factor^2 - 1)`, the standard
/// anti-aliasing match to the downscale step.
pub fn build_pyramid(f: &ScalarField, levels: usize, factor: f64) -> Result<Vec<ScalarField>> {
    if levels < 1 {
        return Err(Error::InvalidArgument("need at least one pyramid level".into()));
    }
    if !(factor > 0.0 && factor < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "downscale factor must lie in (0,1), got {factor}"
        )));
    }
    let shapes = level_shapes(f.shape(), levels, factor);
    let sigma = 0.5 * (1.0 / (factor * factor) - 1.0).sqrt();
    let smooth = Kernel::gaussian(sigma)?;

    let mut out = Vec::with_capacity(shapes.len());
    out.push(f.clone());
    for target in shapes.iter().skip(1) {
        let prev = out.last().unwrap();
        let blurred = convolve(prev, &smooth)?;
        out.push(resample_bilinear(&blurred, *target)?);
    }
    Ok(out)
}

/// Per-channel pyramid of a probability stack, renormalized (and
/// floored) at every level.
pub fn build_stack_pyramid(
    s: &SoftSegmentation,
    levels: usize,
    factor: f64,
    floor: f64,
) -> Result<Vec<SoftSegmentation>> {
    let per_channel: Vec<Vec<ScalarField>> = s
        .channels()
        .iter()
        .map(|ch| build_pyramid(ch, levels, factor))
        .collect::<Result<_>>()?;
    let n_levels = per_channel[0].len();
    (0..n_levels)
        .map(|j| {
            let channels: Vec<ScalarField> = per_channel
                .iter()
                .map(|p| p[j].map(|v| v.max(floor)))
                .collect();
            SoftSegmentation::from_unnormalized(channels)
        })
        .collect()
}
