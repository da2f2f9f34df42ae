//! Separable smoothing kernels.
//!
//! Both supported kinds factor into identical 1-D passes per axis, with
//! nonnegative weights summing to one and symmetric about the center.

use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Debug)]
pub enum KernelKind {
    /// Gaussian with standard deviation in pixels, truncated at radius
    /// ceil(3 sigma) and renormalized.
    Gaussian { sigma: f64 },
    /// Flat kernel of odd side length (a `side`^d box with equal weights).
    Box { side: usize },
}

/// A normalized separable kernel: the same 1-D weight vector applied
/// along every axis.
#[derive(Clone, PartialEq, Debug)]
pub struct Kernel {
    kind: KernelKind,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn gaussian(sigma: f64) -> Result<Kernel> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gaussian sigma must be positive and finite, got {sigma}"
            )));
        }
        let radius = (3.0 * sigma).ceil() as usize;
        let mut w = Vec::with_capacity(2 * radius + 1);
        for i in 0..=2 * radius {
            let x = i as f64 - radius as f64;
            w.push((-x * x / (2.0 * sigma * sigma)).exp());
        }
        let total: f64 = w.iter().sum();
        for v in &mut w {
            *v /= total;
        }
        Ok(Kernel { kind: KernelKind::Gaussian { sigma }, weights: w })
    }

    pub fn boxcar(side: usize) -> Result<Kernel> {
        if side == 0 || side % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "box kernel side must be odd and positive, got {side}"
            )));
        }
        Ok(Kernel {
            kind: KernelKind::Box { side },
            weights: vec![1.0 / side as f64; side],
        })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    /// Half-width of the support: taps run over `[-radius, radius]`.
    pub fn radius(&self) -> usize {
        (self.weights.len() - 1) / 2
    }

    /// The shared 1-D weight vector.
    pub fn weights_1d(&self) -> &[f64] {
        &self.weights
    }

    /// Dense d-dimensional tap table (outer product of the 1-D weights),
    /// used by the brute-force oracle and the FFT route.
    pub fn dense_taps(&self, ndim: usize) -> Vec<(Vec<isize>, f64)> {
        let r = self.radius() as isize;
        let mut taps = vec![(Vec::new(), 1.0)];
        for _ in 0..ndim {
            let mut next = Vec::with_capacity(taps.len() * self.weights.len());
            for (offs, w) in &taps {
                for (j, wj) in self.weights.iter().enumerate() {
                    let mut o = offs.clone();
                    o.push(j as isize - r);
                    next.push((o, w * wj));
                }
            }
            taps = next;
        }
        taps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_normalized_and_symmetric() {
        let k = Kernel::gaussian(2.5).unwrap();
        let w = k.weights_1d();
        let sum: f64 = w.iter().sum();
        assert!((sum - 1.0).abs() < 1e-14);
        for i in 0..w.len() {
            assert!((w[i] - w[w.len() - 1 - i]).abs() < 1e-15);
            assert!(w[i] >= 0.0);
        }
        assert_eq!(k.radius(), 8); // ceil(3 * 2.5)
    }

    #[test]
    fn box_rejects_even_side() {
        assert!(Kernel::boxcar(4).is_err());
        assert!(Kernel::boxcar(0).is_err());
        assert_eq!(Kernel::boxcar(7).unwrap().radius(), 3);
    }
}
