//! Deterministic synthetic image pairs: piecewise-constant shapes, a
//! smooth random deformation, a smooth multiplicative bias, additive
//! noise and optional boundary breaks. The moving image is clean; the
//! fixed image carries all the corruption, which is the regime the
//! joint solver is designed for.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::convolve::convolve;
use crate::error::{Error, Result};
use crate::field::{normalize_intensity, LabelMap, ScalarField, Shape};
use crate::kernel::Kernel;
use crate::reg::{warp, warp_nearest, DisplacementField};

/// Geometric primitives, positioned in fractional image coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShapeKind {
    /// p-pointed star with outer/inner radii as fractions of the
    /// smaller image side.
    Star { points: usize, outer: f64, inner: f64 },
    /// Heart-shaped implicit region scaled by a fraction of the smaller
    /// image side.
    Heart { size: f64 },
    /// Disc with radius as a fraction of the smaller image side.
    Disc { radius: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    /// Center as (row, col) fractions of the image extents.
    pub center: (f64, f64),
    pub intensity: f64,
}

/// Generator parameters. Class 0 is the background; shape `i` renders
/// as class `i + 1`.
#[derive(Clone, Debug)]
pub struct PhantomSpec {
    pub shape: Shape,
    pub seed: u64,
    pub background: f64,
    pub shapes: Vec<ShapeSpec>,
    /// Peak deformation magnitude in pixels.
    pub deform_amplitude: f64,
    pub deform_sigma: f64,
    /// Peak deviation of the bias field from one.
    pub bias_amplitude: f64,
    pub bias_sigma: f64,
    pub noise_std: f64,
    pub boundary_breaks: usize,
    pub break_width: usize,
}

impl PhantomSpec {
    /// Star and heart with clearly distinct intensities, noise and bias:
    /// the regime where bias correction and smoothing decide the
    /// segmentation quality.
    pub fn distinct_pair(shape: Shape, seed: u64) -> PhantomSpec {
        PhantomSpec {
            shape,
            seed,
            background: 0.08,
            shapes: vec![
                ShapeSpec {
                    kind: ShapeKind::Star { points: 5, outer: 0.25, inner: 0.11 },
                    center: (0.28, 0.25),
                    intensity: 0.45,
                },
                ShapeSpec {
                    kind: ShapeKind::Heart { size: 0.18 },
                    center: (0.73, 0.72),
                    intensity: 0.85,
                },
            ],
            deform_amplitude: 2.0,
            deform_sigma: 8.0,
            bias_amplitude: 0.40,
            bias_sigma: 48.0,
            noise_std: 0.10,
            boundary_breaks: 0,
            break_width: 0,
        }
    }

    /// Star and heart with nearly equal intensities plus a boundary
    /// break: intensity alone cannot separate the two objects.
    pub fn similar_pair(shape: Shape, seed: u64) -> PhantomSpec {
        PhantomSpec {
            shape,
            seed,
            background: 0.08,
            shapes: vec![
                ShapeSpec {
                    kind: ShapeKind::Star { points: 5, outer: 0.25, inner: 0.11 },
                    center: (0.28, 0.25),
                    intensity: 0.62,
                },
                ShapeSpec {
                    kind: ShapeKind::Heart { size: 0.18 },
                    center: (0.73, 0.72),
                    intensity: 0.68,
                },
            ],
            deform_amplitude: 2.5,
            deform_sigma: 7.0,
            bias_amplitude: 0.25,
            bias_sigma: 24.0,
            noise_std: 0.05,
            boundary_breaks: 1,
            break_width: 7,
        }
    }

    /// Two same-intensity objects plus a bright disc: three intensity
    /// classes, four anatomical classes (the grouped regime).
    pub fn grouped_pair(shape: Shape, seed: u64) -> PhantomSpec {
        PhantomSpec {
            shape,
            seed,
            background: 0.08,
            shapes: vec![
                ShapeSpec {
                    kind: ShapeKind::Star { points: 5, outer: 0.22, inner: 0.10 },
                    center: (0.27, 0.25),
                    intensity: 0.60,
                },
                ShapeSpec {
                    kind: ShapeKind::Heart { size: 0.16 },
                    center: (0.72, 0.60),
                    intensity: 0.60,
                },
                ShapeSpec {
                    kind: ShapeKind::Disc { radius: 0.09 },
                    center: (0.25, 0.78),
                    intensity: 0.95,
                },
            ],
            deform_amplitude: 1.5,
            deform_sigma: 8.0,
            bias_amplitude: 0.15,
            bias_sigma: 24.0,
            noise_std: 0.04,
            boundary_breaks: 1,
            break_width: 4,
        }
    }

    pub fn class_count(&self) -> usize {
        self.shapes.len() + 1
    }
}

/// Everything [`make_pair`] produces.
#[derive(Clone, Debug)]
pub struct PhantomPair {
    pub moving: ScalarField,
    pub fixed: ScalarField,
    pub gt_moving: LabelMap,
    pub gt_fixed: LabelMap,
    pub true_t: DisplacementField,
    pub true_beta: ScalarField,
}

fn inside(kind: &ShapeKind, center: (f64, f64), shape: Shape, r: f64, c: f64) -> bool {
    let scale = shape.dim(0).min(shape.dim(1)) as f64;
    let cy = center.0 * shape.dim(0) as f64;
    let cx = center.1 * shape.dim(1) as f64;
    match *kind {
        ShapeKind::Disc { radius } => {
            let rr = radius * scale;
            (r - cy).powi(2) + (c - cx).powi(2) <= rr * rr
        }
        ShapeKind::Heart { size } => {
            let s = size * scale;
            let u = (c - cx) / s;
            let v = (cy - r) / s + 0.25;
            let q = u * u + v * v - 1.0;
            q * q * q - u * u * v * v * v <= 0.0
        }
        ShapeKind::Star { points, outer, inner } => {
            let n = 2 * points;
            let verts: Vec<(f64, f64)> = (0..n)
                .map(|i| {
                    let ang = -std::f64::consts::FRAC_PI_2
                        + i as f64 * std::f64::consts::PI / points as f64;
                    let rad = if i % 2 == 0 { outer } else { inner } * scale;
                    (cy + rad * ang.sin(), cx + rad * ang.cos())
                })
                .collect();
            // even-odd ray casting
            let mut in_poly = false;
            for i in 0..n {
                let (y1, x1) = verts[i];
                let (y2, x2) = verts[(i + 1) % n];
                if (y1 > r) != (y2 > r) && c < (x2 - x1) * (r - y1) / (y2 - y1) + x1 {
                    in_poly = !in_poly;
                }
            }
            in_poly
        }
    }
}

fn render(spec: &PhantomSpec, centers: &[(f64, f64)]) -> Result<(ScalarField, LabelMap)> {
    let shape = spec.shape;
    let mut data = vec![spec.background; shape.len()];
    let mut ids = vec![0u32; shape.len()];
    let mut overlap = 0usize;
    for idx in 0..shape.len() {
        let co = shape.coords(idx);
        let (r, c) = (co[0] as f64, co[1] as f64);
        for (si, sh) in spec.shapes.iter().enumerate() {
            if inside(&sh.kind, centers[si], shape, r, c) {
                if ids[idx] != 0 {
                    overlap += 1;
                }
                ids[idx] = si as u32 + 1;
                data[idx] = sh.intensity;
            }
        }
    }
    if overlap > 0 {
        return Err(Error::DegenerateInput(format!(
            "phantom shapes overlap on {overlap} pixels"
        )));
    }
    Ok((
        ScalarField::from_vec(shape, data)?,
        LabelMap::new(shape, spec.class_count(), ids)?,
    ))
}

/// Smoothed unit-normalized noise field: white noise blurred by
/// `sigma`, rescaled to max-abs one.
fn smooth_noise(shape: Shape, rng: &mut ChaCha8Rng, sigma: f64) -> Result<ScalarField> {
    let raw = ScalarField::from_vec(
        shape,
        (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let sm = convolve(&raw, &Kernel::gaussian(sigma)?)?;
    let peak = sm.data().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    Ok(if peak > 0.0 { sm.map(|v| v / peak) } else { sm })
}

/// Generate a moving/fixed pair with ground truth.
///
/// The moving image is the clean rendering; the fixed image is its
/// warp under a smooth random displacement, with boundary breaks
/// repainted to background, multiplied by a smooth bias and degraded by
/// Gaussian noise. Labels are warped nearest-neighbor. Both images are
/// normalized to `[0, 1]`. Identical specs produce identical bytes.
pub fn make_pair(spec: &PhantomSpec) -> Result<PhantomPair> {
    if spec.shape.ndim() != 2 {
        return Err(Error::InvalidArgument("phantoms are 2-D".into()));
    }
    if spec.shapes.is_empty() {
        return Err(Error::InvalidArgument("phantom needs at least one shape".into()));
    }
    let shape = spec.shape;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Rendering retries with jittered centers if shapes collide.
    let mut centers: Vec<(f64, f64)> = spec.shapes.iter().map(|s| s.center).collect();
    let mut rendered = None;
    for attempt in 0..5 {
        match render(spec, &centers) {
            Ok(pair) => {
                rendered = Some(pair);
                break;
            }
            Err(e) => {
                log::warn!("phantom render attempt {attempt} failed ({e}); jittering centers");
                for c in &mut centers {
                    c.0 = (c.0 + rng.gen_range(-0.05..0.05)).clamp(0.15, 0.85);
                    c.1 = (c.1 + rng.gen_range(-0.05..0.05)).clamp(0.15, 0.85);
                }
            }
        }
    }
    let (moving, gt_moving) = rendered.ok_or_else(|| {
        Error::DegenerateInput("phantom shapes still overlap after 5 attempts".into())
    })?;

    // Smooth random displacement scaled to the requested amplitude.
    let true_t = if spec.deform_amplitude > 0.0 {
        let ch0 = smooth_noise(shape, &mut rng, spec.deform_sigma)?;
        let ch1 = smooth_noise(shape, &mut rng, spec.deform_sigma)?;
        let peak = ch0
            .data()
            .iter()
            .chain(ch1.data())
            .fold(0.0f64, |m, &v| m.max(v.abs()));
        let s = spec.deform_amplitude / peak.max(1e-12);
        DisplacementField::new(vec![ch0.map(|v| v * s), ch1.map(|v| v * s)])?
    } else {
        DisplacementField::zeros(shape)
    };

    let gt_fixed = warp_nearest(&gt_moving, &true_t)?;
    let mut fixed = warp(&moving, &true_t)?;

    // Boundary breaks: repaint squares sitting on object/background
    // boundaries with the background intensity.
    if spec.boundary_breaks > 0 && spec.break_width > 0 {
        let ids = gt_fixed.ids();
        let mut candidates = Vec::new();
        for idx in 0..shape.len() {
            if ids[idx] == 0 {
                continue;
            }
            let co = shape.coords(idx);
            let mut on_boundary = false;
            for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                let r = co[0] as isize + dr;
                let c = co[1] as isize + dc;
                if r < 0 || c < 0 || r >= shape.dim(0) as isize || c >= shape.dim(1) as isize {
                    continue;
                }
                if ids[shape.idx2(r as usize, c as usize)] == 0 {
                    on_boundary = true;
                    break;
                }
            }
            if on_boundary {
                candidates.push(idx);
            }
        }
        let data = fixed.data_mut();
        for _ in 0..spec.boundary_breaks {
            if candidates.is_empty() {
                break;
            }
            let pick = candidates[rng.gen_range(0..candidates.len())];
            let co = shape.coords(pick);
            let half = spec.break_width as isize / 2;
            for dr in -half..=half {
                for dc in -half..=half {
                    let r = co[0] as isize + dr;
                    let c = co[1] as isize + dc;
                    if r >= 0 && c >= 0 && r < shape.dim(0) as isize && c < shape.dim(1) as isize
                    {
                        data[shape.idx2(r as usize, c as usize)] = spec.background;
                    }
                }
            }
        }
    }

    // Smooth multiplicative bias spanning the full requested range.
    let true_beta = if spec.bias_amplitude > 0.0 {
        let g = smooth_noise(shape, &mut rng, spec.bias_sigma)?;
        let (lo, hi) = g.min_max();
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        if half > 0.0 {
            g.map(|v| 1.0 + spec.bias_amplitude * (v - mid) / half)
        } else {
            ScalarField::constant(shape, 1.0)
        }
    } else {
        ScalarField::constant(shape, 1.0)
    };
    let mut fixed = fixed.zip_map(&true_beta, |f, b| f * b);

    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std)
            .map_err(|e| Error::InvalidArgument(format!("noise std: {e}")))?;
        for v in fixed.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }

    Ok(PhantomPair {
        moving: normalize_intensity(&moving),
        fixed: normalize_intensity(&fixed),
        gt_moving,
        gt_fixed,
        true_t,
        true_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_spec_reproduces_moving() {
        let mut spec = PhantomSpec::distinct_pair(Shape::d2(48, 48), 3);
        spec.deform_amplitude = 0.0;
        spec.bias_amplitude = 0.0;
        spec.noise_std = 0.0;
        spec.boundary_breaks = 0;
        let p = make_pair(&spec).unwrap();
        assert_eq!(p.fixed.data(), p.moving.data());
        assert_eq!(p.gt_fixed.ids(), p.gt_moving.ids());
    }

    #[test]
    fn deterministic_across_runs() {
        let spec = PhantomSpec::similar_pair(Shape::d2(64, 64), 7);
        let a = make_pair(&spec).unwrap();
        let b = make_pair(&spec).unwrap();
        assert_eq!(a.fixed.data(), b.fixed.data());
        assert_eq!(a.moving.data(), b.moving.data());
        assert_eq!(a.gt_fixed.ids(), b.gt_fixed.ids());
        for ax in 0..2 {
            assert_eq!(a.true_t.channel(ax).data(), b.true_t.channel(ax).data());
        }
        assert_eq!(a.true_beta.data(), b.true_beta.data());
    }

    #[test]
    fn bias_respects_amplitude_and_smoothness() {
        let mut spec = PhantomSpec::distinct_pair(Shape::d2(64, 64), 11);
        spec.bias_amplitude = 0.3;
        spec.bias_sigma = 40.0;
        let p = make_pair(&spec).unwrap();
        let shape = p.true_beta.shape();
        let mut max_dev = 0.0f64;
        let mut max_grad = 0.0f64;
        for r in 0..64 {
            for c in 0..64 {
                let v = p.true_beta.at(shape.idx2(r, c));
                max_dev = max_dev.max((v - 1.0).abs());
                if r + 1 < 64 {
                    max_grad = max_grad.max((p.true_beta.at(shape.idx2(r + 1, c)) - v).abs());
                }
                if c + 1 < 64 {
                    max_grad = max_grad.max((p.true_beta.at(shape.idx2(r, c + 1)) - v).abs());
                }
            }
        }
        assert!(max_dev <= 0.3 + 1e-12, "bias deviation {max_dev}");
        assert!(max_grad < 0.01, "bias gradient {max_grad}");
    }

    #[test]
    fn label_volumes_stay_within_twenty_percent() {
        let spec = PhantomSpec::similar_pair(Shape::d2(96, 96), 5);
        let p = make_pair(&spec).unwrap();
        for class in 0..spec.class_count() as u32 {
            let vm = p.gt_moving.class_mask(class).iter().filter(|&&b| b).count() as f64;
            let vf = p.gt_fixed.class_mask(class).iter().filter(|&&b| b).count() as f64;
            assert!(vm > 0.0, "class {class} empty in moving");
            assert!(
                (vf - vm).abs() / vm < 0.2,
                "class {class} volume changed {vm} -> {vf}"
            );
        }
    }
}
