//! Dense grid containers: scalar fields, soft segmentations and label maps.
//!
//! All fields are row-major (C order) over a 2-D or 3-D voxel grid with
//! unit spacing. Values live in `f64` in memory; the on-disk format is
//! little-endian `f32` (see [`crate::io`]).

use crate::error::{Error, Result};
use crate::exec;

/// Grid extents, 2-D or 3-D.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    dims: [usize; 3],
    ndim: usize,
}

impl Shape {
    pub fn d2(rows: usize, cols: usize) -> Shape {
        assert!(rows > 0 && cols > 0, "zero-sized shape");
        Shape { dims: [rows, cols, 1], ndim: 2 }
    }

    pub fn d3(planes: usize, rows: usize, cols: usize) -> Shape {
        assert!(planes > 0 && rows > 0 && cols > 0, "zero-sized shape");
        Shape { dims: [planes, rows, cols], ndim: 3 }
    }

    pub fn from_dims(dims: &[usize]) -> Result<Shape> {
        match dims {
            [r, c] => Ok(Shape::d2(*r, *c)),
            [p, r, c] => Ok(Shape::d3(*p, *r, *c)),
            _ => Err(Error::InvalidArgument(format!(
                "shape must have 2 or 3 dims, got {}",
                dims.len()
            ))),
        }
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    /// Extents in index order (row-major significance).
    pub fn dims(&self) -> &[usize] {
        &self.dims[..self.ndim]
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.dims()[axis]
    }

    /// Total voxel count.
    pub fn len(&self) -> usize {
        self.dims().iter().product()
    }

    /// Flat index of integer coordinates (2-D variant).
    #[inline]
    pub fn idx2(&self, r: usize, c: usize) -> usize {
        debug_assert_eq!(self.ndim, 2);
        r * self.dims[1] + c
    }

    #[inline]
    pub fn idx3(&self, p: usize, r: usize, c: usize) -> usize {
        debug_assert_eq!(self.ndim, 3);
        (p * self.dims[1] + r) * self.dims[2] + c
    }

    /// Decompose a flat index into per-axis coordinates.
    #[inline]
    pub fn coords(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        for axis in (0..self.ndim).rev() {
            out[axis] = idx % self.dims[axis];
            idx /= self.dims[axis];
        }
        out
    }

    /// Flat index from per-axis coordinates.
    #[inline]
    pub fn index_of(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        for axis in 0..self.ndim {
            idx = idx * self.dims[axis] + coords[axis];
        }
        idx
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let dims: Vec<String> = self.dims().iter().map(|d| d.to_string()).collect();
        write!(f, "{}", dims.join(","))
    }
}

/// Dense real-valued field on a voxel grid.
#[derive(Clone, PartialEq, Debug)]
pub struct ScalarField {
    shape: Shape,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(shape: Shape) -> ScalarField {
        ScalarField { shape, data: vec![0.0; shape.len()] }
    }

    pub fn constant(shape: Shape, value: f64) -> ScalarField {
        ScalarField { shape, data: vec![value; shape.len()] }
    }

    /// Wrap raw row-major data. Rejects length mismatches and non-finite
    /// values.
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<ScalarField> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", shape.len()),
                got: format!("{}", data.len()),
                context: "ScalarField::from_vec",
            });
        }
        let f = ScalarField { shape, data };
        f.check_finite("ScalarField::from_vec")?;
        Ok(f)
    }

    pub fn from_fn(shape: Shape, f: impl Fn(&[usize]) -> f64 + Sync) -> ScalarField {
        let mut out = ScalarField::zeros(shape);
        let sh = shape;
        exec::fill(&mut out.data, |i| {
            let c = sh.coords(i);
            f(&c[..sh.ndim()])
        });
        out
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, idx: usize) -> f64 {
        self.data[idx]
    }

    pub fn check_finite(&self, context: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context))
        }
    }

    /// Element-wise map into a new field.
    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> ScalarField {
        let mut out = ScalarField::zeros(self.shape);
        let src = &self.data;
        exec::fill(&mut out.data, |i| f(src[i]));
        out
    }

    /// Element-wise combination of two same-shape fields.
    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64 + Sync) -> ScalarField {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        let mut out = ScalarField::zeros(self.shape);
        let (a, b) = (&self.data, &other.data);
        exec::fill(&mut out.data, |i| f(a[i], b[i]));
        out
    }

    pub fn sum(&self) -> f64 {
        let d = &self.data;
        exec::sum(d.len(), |i| d[i])
    }

    pub fn dot(&self, other: &ScalarField) -> f64 {
        assert_eq!(self.shape, other.shape, "dot shape mismatch");
        let (a, b) = (&self.data, &other.data);
        exec::sum(a.len(), |i| a[i] * b[i])
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Affine rescale of a field to `[0, 1]`.
///
/// A constant field has no range to stretch; it maps to all zeros with a
/// warning.
pub fn normalize_intensity(f: &ScalarField) -> ScalarField {
    let (lo, hi) = f.min_max();
    if hi - lo <= 0.0 {
        log::warn!("normalize_intensity: constant input, returning zeros");
        return ScalarField::zeros(f.shape());
    }
    let scale = 1.0 / (hi - lo);
    f.map(|v| (v - lo) * scale)
}

/// Per-pixel class probabilities on the K-simplex, stored as K scalar
/// fields of identical shape.
#[derive(Clone, Debug)]
pub struct SoftSegmentation {
    channels: Vec<ScalarField>,
}

impl SoftSegmentation {
    /// Tolerance on the per-pixel channel sum.
    pub const SIMPLEX_TOL: f64 = 1e-9;

    pub fn new(channels: Vec<ScalarField>) -> Result<SoftSegmentation> {
        if channels.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "SoftSegmentation needs K >= 2 channels, got {}",
                channels.len()
            )));
        }
        let shape = channels[0].shape();
        for ch in &channels {
            if ch.shape() != shape {
                return Err(Error::ShapeMismatch {
                    expected: shape.to_string(),
                    got: ch.shape().to_string(),
                    context: "SoftSegmentation::new",
                });
            }
        }
        let s = SoftSegmentation { channels };
        s.check_simplex()?;
        Ok(s)
    }

    /// Build from per-channel data, renormalizing each pixel onto the
    /// simplex. Negative values are rejected.
    pub fn from_unnormalized(channels: Vec<ScalarField>) -> Result<SoftSegmentation> {
        let mut s = SoftSegmentation { channels };
        for ch in &s.channels {
            if ch.data().iter().any(|&v| !v.is_finite() || v < 0.0) {
                return Err(Error::InvalidArgument(
                    "SoftSegmentation channels must be finite and nonnegative".into(),
                ));
            }
        }
        s.renormalize();
        Ok(s)
    }

    /// Uniform membership 1/K everywhere.
    pub fn uniform(shape: Shape, k: usize) -> SoftSegmentation {
        let v = 1.0 / k as f64;
        SoftSegmentation {
            channels: (0..k).map(|_| ScalarField::constant(shape, v)).collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.channels.len()
    }

    pub fn shape(&self) -> Shape {
        self.channels[0].shape()
    }

    pub fn channel(&self, k: usize) -> &ScalarField {
        &self.channels[k]
    }

    pub fn channels(&self) -> &[ScalarField] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<ScalarField> {
        self.channels
    }

    fn check_simplex(&self) -> Result<()> {
        let n = self.shape().len();
        for i in 0..n {
            let mut sum = 0.0;
            for ch in &self.channels {
                let v = ch.at(i);
                if !(0.0..=1.0 + Self::SIMPLEX_TOL).contains(&v) {
                    return Err(Error::InvalidArgument(format!(
                        "membership {v} outside [0,1] at pixel {i}"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > Self::SIMPLEX_TOL {
                return Err(Error::InvalidArgument(format!(
                    "channel sum {sum} != 1 at pixel {i}"
                )));
            }
        }
        Ok(())
    }

    /// Rescale every pixel so the channels sum to exactly one.
    pub fn renormalize(&mut self) {
        let n = self.shape().len();
        let k = self.k();
        let mut sums = vec![0.0; n];
        for ch in &self.channels {
            let d = ch.data();
            for i in 0..n {
                sums[i] += d[i];
            }
        }
        for ch in &mut self.channels {
            let d = ch.data_mut();
            exec::fill_chunks(d, |start, chunk| {
                for (j, v) in chunk.iter_mut().enumerate() {
                    let s = sums[start + j];
                    *v = if s > 0.0 { *v / s } else { 1.0 / k as f64 };
                }
            });
        }
    }
}

/// Per-pixel integer class assignment.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LabelMap {
    shape: Shape,
    k: usize,
    ids: Vec<u32>,
}

impl LabelMap {
    pub fn new(shape: Shape, k: usize, ids: Vec<u32>) -> Result<LabelMap> {
        if ids.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} ids", shape.len()),
                got: format!("{}", ids.len()),
                context: "LabelMap::new",
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= k) {
            return Err(Error::InvalidArgument(format!(
                "label id {bad} out of range for K={k}"
            )));
        }
        Ok(LabelMap { shape, k, ids })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Boolean mask of one class.
    pub fn class_mask(&self, class: u32) -> Vec<bool> {
        self.ids.iter().map(|&id| id == class).collect()
    }

    /// One-hot soft segmentation with this map's class count.
    pub fn one_hot(&self) -> SoftSegmentation {
        let mut channels: Vec<ScalarField> =
            (0..self.k).map(|_| ScalarField::zeros(self.shape)).collect();
        for (i, &id) in self.ids.iter().enumerate() {
            channels[id as usize].data_mut()[i] = 1.0;
        }
        SoftSegmentation { channels }
    }
}

/// Per-pixel argmax of the membership channels; ties go to the lowest
/// class index.
pub fn argmax_label(u: &SoftSegmentation) -> LabelMap {
    let n = u.shape().len();
    let mut ids = vec![0u32; n];
    let mut best: Vec<f64> = u.channel(0).data().to_vec();
    for (k, ch) in u.channels().iter().enumerate().skip(1) {
        let d = ch.data();
        for i in 0..n {
            if d[i] > best[i] {
                best[i] = d[i];
                ids[i] = k as u32;
            }
        }
    }
    LabelMap { shape: u.shape(), k: u.k(), ids }
}
