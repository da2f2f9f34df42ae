//! One-dimensional K-means initialization of the memberships.

use crate::error::{Error, Result};
use crate::field::{LabelMap, ScalarField, SoftSegmentation};

/// Hard (one-hot) memberships from Lloyd iteration on intensities.
///
/// Centers start at evenly spaced intensity quantiles and classes are
/// relabeled by ascending mean, so the result is deterministic. The seed
/// is accepted for interface stability; the quantile initialization
/// leaves nothing random to draw.
pub fn kmeans_init(image: &ScalarField, k: usize, _seed: u64) -> Result<SoftSegmentation> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("K must be >= 2, got {k}")));
    }
    image.check_finite("kmeans_init input")?;
    let values = image.data();
    let n = values.len();

    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let distinct = sorted.windows(2).filter(|w| w[0] < w[1]).count() + 1;
    if distinct < k {
        return Err(Error::DegenerateInput(format!(
            "image has {distinct} distinct intensities, need at least {k}"
        )));
    }

    // Centers at evenly spaced intensity levels between min and max,
    // independent of how the histogram mass is distributed.
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    let centers: Vec<f64> = (0..k)
        .map(|i| lo + (i as f64 + 0.5) / k as f64 * (hi - lo))
        .collect();
    let mut centers = centers;

    let mut assign = vec![0usize; n];
    let mut changed = true;
    let mut guard = 0;
    while changed && guard < 1000 {
        guard += 1;
        changed = false;
        for (i, &v) in values.iter().enumerate() {
            let mut best = 0;
            let mut best_d = (v - centers[0]).abs();
            for (c, &ctr) in centers.iter().enumerate().skip(1) {
                let d = (v - ctr).abs();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (i, &v) in values.iter().enumerate() {
            sums[assign[i]] += v;
            counts[assign[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c] / counts[c] as f64;
            } else {
                // Reseed an empty cluster at the point farthest from its
                // nearest center.
                let far = values
                    .iter()
                    .map(|&v| {
                        centers
                            .iter()
                            .map(|&ctr| (v - ctr).abs())
                            .fold(f64::INFINITY, f64::min)
                    })
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                centers[c] = values[far];
                changed = true;
            }
        }
    }

    // Relabel by ascending center so class ids are reproducible.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centers[a].partial_cmp(&centers[b]).unwrap());
    let mut remap = vec![0u32; k];
    for (new_id, &old_id) in order.iter().enumerate() {
        remap[old_id] = new_id as u32;
    }
    let ids: Vec<u32> = assign.iter().map(|&a| remap[a]).collect();
    Ok(LabelMap::new(image.shape(), k, ids)?.one_hot())
}
