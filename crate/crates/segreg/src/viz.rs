//! Raster figure output: grayscale PGM and indexed-color PPM files for
//! label maps, contour overlays, deformed meshes and displacement
//! quivers. 2-D only; 3-D fields are rendered slice by slice upstream.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{LabelMap, ScalarField, Shape};
use crate::reg::DisplacementField;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn require_2d(shape: Shape, what: &str) -> Result<(usize, usize)> {
    if shape.ndim() != 2 {
        return Err(Error::InvalidArgument(format!("{what} rendering needs a 2-D field")));
    }
    Ok((shape.dim(0), shape.dim(1)))
}

/// Distinct colors for label classes (background first).
const PALETTE: [[u8; 3]; 8] = [
    [20, 20, 20],
    [220, 60, 60],
    [70, 200, 90],
    [80, 110, 230],
    [230, 200, 60],
    [180, 80, 200],
    [70, 200, 210],
    [240, 140, 50],
];

pub fn palette_color(class: usize) -> [u8; 3] {
    PALETTE[class % PALETTE.len()]
}

/// 8-bit grayscale PGM with the field affinely mapped onto [0, 255].
pub fn write_pgm(path: &Path, f: &ScalarField) -> Result<()> {
    let (h, w) = require_2d(f.shape(), "image")?;
    let (lo, hi) = f.min_max();
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    write!(out, "P5\n{w} {h}\n255\n").map_err(|e| io_err(path, e))?;
    let bytes: Vec<u8> = f
        .data()
        .iter()
        .map(|&v| ((v - lo) * scale).round().clamp(0.0, 255.0) as u8)
        .collect();
    out.write_all(&bytes).map_err(|e| io_err(path, e))?;
    out.flush().map_err(|e| io_err(path, e))
}

fn write_ppm(path: &Path, w: usize, h: usize, rgb: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    write!(out, "P6\n{w} {h}\n255\n").map_err(|e| io_err(path, e))?;
    out.write_all(rgb).map_err(|e| io_err(path, e))?;
    out.flush().map_err(|e| io_err(path, e))
}

/// Indexed-color label rendering.
pub fn write_label_ppm(path: &Path, labels: &LabelMap) -> Result<()> {
    let (h, w) = require_2d(labels.shape(), "label map")?;
    let mut rgb = Vec::with_capacity(3 * w * h);
    for &id in labels.ids() {
        rgb.extend_from_slice(&palette_color(id as usize));
    }
    write_ppm(path, w, h, &rgb)
}

fn image_to_rgb(f: &ScalarField) -> Vec<u8> {
    let (lo, hi) = f.min_max();
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    f.data()
        .iter()
        .flat_map(|&v| {
            let g = ((v - lo) * scale).round().clamp(0.0, 255.0) as u8;
            [g, g, g]
        })
        .collect()
}

/// Grayscale image with class contours overlaid in the palette colors.
pub fn write_contour_ppm(path: &Path, image: &ScalarField, labels: &LabelMap) -> Result<()> {
    let (h, w) = require_2d(image.shape(), "contour overlay")?;
    if labels.shape() != image.shape() {
        return Err(Error::ShapeMismatch {
            expected: image.shape().to_string(),
            got: labels.shape().to_string(),
            context: "write_contour_ppm",
        });
    }
    let mut rgb = image_to_rgb(image);
    let shape = image.shape();
    let ids = labels.ids();
    for r in 0..h {
        for c in 0..w {
            let i = shape.idx2(r, c);
            let id = ids[i];
            let boundary = (r + 1 < h && ids[shape.idx2(r + 1, c)] != id)
                || (c + 1 < w && ids[shape.idx2(r, c + 1)] != id);
            if boundary {
                let color = if id != 0 {
                    palette_color(id as usize)
                } else if r + 1 < h && ids[shape.idx2(r + 1, c)] != id {
                    palette_color(ids[shape.idx2(r + 1, c)] as usize)
                } else {
                    palette_color(ids[shape.idx2(r, c + 1)] as usize)
                };
                rgb[3 * i..3 * i + 3].copy_from_slice(&color);
            }
        }
    }
    write_ppm(path, w, h, &rgb)
}

fn draw_line(rgb: &mut [u8], shape: Shape, p0: (f64, f64), p1: (f64, f64), color: [u8; 3]) {
    let (h, w) = (shape.dim(0) as isize, shape.dim(1) as isize);
    let steps = ((p1.0 - p0.0).abs().max((p1.1 - p0.1).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let r = (p0.0 + t * (p1.0 - p0.0)).round() as isize;
        let c = (p0.1 + t * (p1.1 - p0.1)).round() as isize;
        if r >= 0 && c >= 0 && r < h && c < w {
            let i = (r as usize) * shape.dim(1) + c as usize;
            rgb[3 * i..3 * i + 3].copy_from_slice(&color);
        }
    }
}

/// Deformed mesh: grid lines at `step`-pixel spacing displaced by `T`.
pub fn write_mesh_ppm(path: &Path, t: &DisplacementField, step: usize) -> Result<()> {
    let (h, w) = require_2d(t.shape(), "mesh")?;
    let shape = t.shape();
    let mut rgb = vec![255u8; 3 * w * h];
    let color = [40u8, 40, 160];
    let pos = |r: usize, c: usize| {
        let i = shape.idx2(r, c);
        (r as f64 + t.channel(0).at(i), c as f64 + t.channel(1).at(i))
    };
    for r in (0..h).step_by(step.max(1)) {
        for c in 0..w.saturating_sub(1) {
            draw_line(&mut rgb, shape, pos(r, c), pos(r, c + 1), color);
        }
    }
    for c in (0..w).step_by(step.max(1)) {
        for r in 0..h.saturating_sub(1) {
            draw_line(&mut rgb, shape, pos(r, c), pos(r + 1, c), color);
        }
    }
    write_ppm(path, w, h, &rgb)
}

/// Displacement quiver: arrows from a `step`-spaced lattice, length
/// equal to the local displacement.
pub fn write_quiver_ppm(path: &Path, t: &DisplacementField, step: usize) -> Result<()> {
    let (h, w) = require_2d(t.shape(), "quiver")?;
    let shape = t.shape();
    let mut rgb = vec![255u8; 3 * w * h];
    let color = [180u8, 40, 40];
    for r in (0..h).step_by(step.max(1)) {
        for c in (0..w).step_by(step.max(1)) {
            let i = shape.idx2(r, c);
            let from = (r as f64, c as f64);
            let to = (r as f64 + t.channel(0).at(i), c as f64 + t.channel(1).at(i));
            draw_line(&mut rgb, shape, from, to, color);
            let ri = to.0.round() as isize;
            let ci = to.1.round() as isize;
            if ri >= 0 && ci >= 0 && (ri as usize) < h && (ci as usize) < w {
                let j = shape.idx2(ri as usize, ci as usize);
                rgb[3 * j..3 * j + 3].copy_from_slice(&[0, 0, 0]);
            }
        }
    }
    write_ppm(path, w, h, &rgb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_parse_as_pnm() {
        let dir = std::env::temp_dir().join(format!("segreg_viz_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let shape = Shape::d2(8, 10);
        let img = ScalarField::from_fn(shape, |c| (c[0] + c[1]) as f64);
        write_pgm(&dir.join("a.pgm"), &img).unwrap();
        let head = std::fs::read(dir.join("a.pgm")).unwrap();
        assert!(head.starts_with(b"P5\n10 8\n255\n"));
        assert_eq!(head.len(), 12 + 80);

        let labels = LabelMap::new(shape, 2, (0..80).map(|i| (i % 2) as u32).collect()).unwrap();
        write_label_ppm(&dir.join("l.ppm"), &labels).unwrap();
        let head = std::fs::read(dir.join("l.ppm")).unwrap();
        assert!(head.starts_with(b"P6\n10 8\n255\n"));
        assert_eq!(head.len(), 12 + 240);

        write_contour_ppm(&dir.join("c.ppm"), &img, &labels).unwrap();
        let t = DisplacementField::zeros(shape);
        write_mesh_ppm(&dir.join("m.ppm"), &t, 2).unwrap();
        write_quiver_ppm(&dir.join("q.ppm"), &t, 2).unwrap();
        std::fs::remove_dir_all(&dir).ok();
    }
}
