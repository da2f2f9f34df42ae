//! Segmentation quality metrics: modified Jaccard, Dice and average
//! surface distance, with per-class report tables.

use crate::error::{Error, Result};
use crate::field::{LabelMap, Shape};

/// Overlap counts shared by the two set metrics.
fn counts(x: &[bool], y: &[bool]) -> (usize, usize, usize) {
    let mut nx = 0;
    let mut ny = 0;
    let mut ni = 0;
    for (&a, &b) in x.iter().zip(y) {
        nx += a as usize;
        ny += b as usize;
        ni += (a && b) as usize;
    }
    (nx, ny, ni)
}

/// `|X ∩ Y| / (|X| + |Y| - |X ∩ Y|)`; both masks empty counts as 1.
pub fn modified_jaccard(x: &[bool], y: &[bool]) -> f64 {
    let (nx, ny, ni) = counts(x, y);
    let denom = nx + ny - ni;
    if denom == 0 {
        1.0
    } else {
        ni as f64 / denom as f64
    }
}

/// `2 |X ∩ Y| / (|X| + |Y|)`; both masks empty counts as 1.
pub fn dice(x: &[bool], y: &[bool]) -> f64 {
    let (nx, ny, ni) = counts(x, y);
    if nx + ny == 0 {
        1.0
    } else {
        2.0 * ni as f64 / (nx + ny) as f64
    }
}

/// Mask pixels with a face-neighbor (4 in 2-D, 6 in 3-D) outside the
/// mask; pixels on the grid border count as boundary.
pub fn boundary_pixels(mask: &[bool], shape: Shape) -> Vec<[usize; 3]> {
    let ndim = shape.ndim();
    let mut out = Vec::new();
    for (idx, &inside) in mask.iter().enumerate() {
        if !inside {
            continue;
        }
        let c = shape.coords(idx);
        let mut is_boundary = false;
        'axes: for a in 0..ndim {
            for step in [-1isize, 1] {
                let q = c[a] as isize + step;
                if q < 0 || q >= shape.dim(a) as isize {
                    is_boundary = true;
                    break 'axes;
                }
                let mut cc = c;
                cc[a] = q as usize;
                if !mask[shape.index_of(&cc[..ndim])] {
                    is_boundary = true;
                    break 'axes;
                }
            }
        }
        if is_boundary {
            out.push(c);
        }
    }
    out
}

fn directed_sum(from: &[[usize; 3]], to: &[[usize; 3]], ndim: usize) -> f64 {
    let mut total = 0.0;
    for p in from {
        let mut best = f64::INFINITY;
        for q in to {
            let mut d2 = 0.0;
            for a in 0..ndim {
                let d = p[a] as f64 - q[a] as f64;
                d2 += d * d;
            }
            best = best.min(d2);
        }
        total += best.sqrt();
    }
    total
}

/// Symmetric average surface distance between two mask boundaries, in
/// voxel units: the sum of both directed nearest-distance sums over
/// `|∂X| + |∂Y|`.
pub fn average_surface_distance(x: &[bool], y: &[bool], shape: Shape) -> Result<f64> {
    let bx = boundary_pixels(x, shape);
    let by = boundary_pixels(y, shape);
    if bx.is_empty() {
        return Err(Error::DegenerateInput(
            "average_surface_distance: first operand has an empty boundary".into(),
        ));
    }
    if by.is_empty() {
        return Err(Error::DegenerateInput(
            "average_surface_distance: second operand has an empty boundary".into(),
        ));
    }
    let ndim = shape.ndim();
    let total = directed_sum(&bx, &by, ndim) + directed_sum(&by, &bx, ndim);
    Ok(total / (bx.len() + by.len()) as f64)
}

/// Per-class metric row.
#[derive(Clone, Copy, Debug)]
pub struct ClassMetrics {
    pub class: u32,
    pub mj: f64,
    pub dsc: f64,
    /// Not available when a class is absent from both maps.
    pub asd: Option<f64>,
}

/// Per-class table plus mean and standard deviation rows.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub rows: Vec<ClassMetrics>,
}

impl MetricReport {
    /// Compare `predicted` against `reference` class by class.
    pub fn compare(predicted: &LabelMap, reference: &LabelMap) -> Result<MetricReport> {
        if predicted.shape() != reference.shape() {
            return Err(Error::ShapeMismatch {
                expected: reference.shape().to_string(),
                got: predicted.shape().to_string(),
                context: "MetricReport::compare",
            });
        }
        let k = predicted.k().max(reference.k());
        let shape = predicted.shape();
        let rows = (0..k as u32)
            .map(|class| {
                let x = predicted.class_mask(class);
                let y = reference.class_mask(class);
                ClassMetrics {
                    class,
                    mj: modified_jaccard(&x, &y),
                    dsc: dice(&x, &y),
                    asd: average_surface_distance(&x, &y, shape).ok(),
                }
            })
            .collect();
        Ok(MetricReport { rows })
    }

    pub fn mean_dsc(&self) -> f64 {
        self.rows.iter().map(|r| r.dsc).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_mj(&self) -> f64 {
        self.rows.iter().map(|r| r.mj).sum::<f64>() / self.rows.len() as f64
    }

    fn mean_std(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// CSV table: one row per class, then a `mean` and a `std` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,mJ,DSC,ASD\n");
        for r in &self.rows {
            let asd = r.asd.map(|v| format!("{v:.6}")).unwrap_or_else(|| "NA".into());
            out.push_str(&format!("{},{:.6},{:.6},{asd}\n", r.class, r.mj, r.dsc));
        }
        let mjs: Vec<f64> = self.rows.iter().map(|r| r.mj).collect();
        let dscs: Vec<f64> = self.rows.iter().map(|r| r.dsc).collect();
        let asds: Vec<f64> = self.rows.iter().filter_map(|r| r.asd).collect();
        let (mj_m, mj_s) = Self::mean_std(&mjs);
        let (d_m, d_s) = Self::mean_std(&dscs);
        if asds.is_empty() {
            out.push_str(&format!("mean,{mj_m:.6},{d_m:.6},NA\n"));
            out.push_str(&format!("std,{mj_s:.6},{d_s:.6},NA\n"));
        } else {
            let (a_m, a_s) = Self::mean_std(&asds);
            out.push_str(&format!("mean,{mj_m:.6},{d_m:.6},{a_m:.6}\n"));
            out.push_str(&format!("std,{mj_s:.6},{d_s:.6},{a_s:.6}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn block_mask(shape: Shape, r0: usize, c0: usize, h: usize, w: usize) -> Vec<bool> {
        let mut m = vec![false; shape.len()];
        for r in r0..r0 + h {
            for c in c0..c0 + w {
                m[shape.idx2(r, c)] = true;
            }
        }
        m
    }

    #[test]
    fn identical_and_disjoint_masks() {
        let shape = Shape::d2(4, 4);
        let a = block_mask(shape, 0, 0, 2, 2);
        let b = block_mask(shape, 2, 2, 2, 2);
        assert_eq!(modified_jaccard(&a, &a), 1.0);
        assert_eq!(dice(&a, &a), 1.0);
        assert_eq!(modified_jaccard(&a, &b), 0.0);
        assert_eq!(dice(&a, &b), 0.0);
        assert_eq!(average_surface_distance(&a, &a, shape).unwrap(), 0.0);
    }

    #[test]
    fn shifted_block_hand_enumeration() {
        // 2x2 block against the same block shifted by one pixel:
        // intersection 2, union 6.
        let shape = Shape::d2(4, 4);
        let a = block_mask(shape, 1, 1, 2, 2);
        let b = block_mask(shape, 2, 1, 2, 2);
        assert!((modified_jaccard(&a, &b) - 2.0 / 6.0).abs() < 1e-15);
        assert!((dice(&a, &b) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singleton_distance() {
        let shape = Shape::d2(5, 5);
        let mut a = vec![false; 25];
        let mut b = vec![false; 25];
        a[shape.idx2(1, 1)] = true;
        b[shape.idx2(1, 4)] = true;
        assert_eq!(average_surface_distance(&a, &b, shape).unwrap(), 3.0);
    }

    #[test]
    fn dice_jaccard_identity_and_symmetry() {
        let shape = Shape::d2(12, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let a: Vec<bool> = (0..shape.len()).map(|_| rng.gen_bool(0.4)).collect();
            let b: Vec<bool> = (0..shape.len()).map(|_| rng.gen_bool(0.4)).collect();
            let mj = modified_jaccard(&a, &b);
            let d = dice(&a, &b);
            assert!((d - 2.0 * mj / (1.0 + mj)).abs() < 1e-12);
            assert_eq!(mj, modified_jaccard(&b, &a));
            assert_eq!(d, dice(&b, &a));
            assert!(d >= mj);
        }
    }

    #[test]
    fn asd_translation_invariant_for_interior_masks() {
        let shape = Shape::d2(16, 16);
        let a = block_mask(shape, 2, 2, 3, 4);
        let b = block_mask(shape, 3, 4, 4, 3);
        let a2 = block_mask(shape, 2 + 4, 2 + 5, 3, 4);
        let b2 = block_mask(shape, 3 + 4, 4 + 5, 4, 3);
        let d1 = average_surface_distance(&a, &b, shape).unwrap();
        let d2 = average_surface_distance(&a2, &b2, shape).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
    }

    #[test]
    fn empty_boundary_is_an_error() {
        let shape = Shape::d2(4, 4);
        let empty = vec![false; 16];
        let full = block_mask(shape, 0, 0, 2, 2);
        let err = average_surface_distance(&empty, &full, shape).unwrap_err();
        assert!(err.to_string().contains("first operand"));
    }
}
