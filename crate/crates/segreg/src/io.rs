//! Field file format.
//!
//! One text header line
//!
//! ```text
//! SEGREG1 dtype=f32 order=C shape=<d1,d2[,d3]> channels=<K>
//! ```
//!
//! followed by a newline and raw little-endian 32-bit floats in row-major
//! order, channel-major for multi-channel stacks. Label maps are stored
//! as single-channel files holding exact integer class ids.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{LabelMap, ScalarField, Shape, SoftSegmentation};

const MAGIC: &str = "SEGREG1";

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn write_raw(path: &Path, shape: Shape, channels: &[&[f64]]) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!(
        "{MAGIC} dtype=f32 order=C shape={} channels={}\n",
        shape,
        channels.len()
    );
    w.write_all(header.as_bytes()).map_err(|e| io_err(path, e))?;
    let mut buf = Vec::with_capacity(shape.len() * 4);
    for ch in channels {
        buf.clear();
        for &v in *ch {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Write an arbitrary multi-channel stack (displacement fields, raw
/// data) in the standard format.
pub fn write_raw_channels(path: &Path, shape: Shape, channels: &[&[f64]]) -> Result<()> {
    if channels.is_empty() {
        return Err(Error::InvalidArgument("need at least one channel".into()));
    }
    for ch in channels {
        if ch.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", shape.len()),
                got: format!("{}", ch.len()),
                context: "write_raw_channels",
            });
        }
    }
    write_raw(path, shape, channels)
}

/// Raw stack as read from disk: shape plus one `Vec<f64>` per channel.
pub struct RawField {
    pub shape: Shape,
    pub channels: Vec<Vec<f64>>,
}

pub fn read_raw(path: &Path) -> Result<RawField> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);

    let mut header = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte).map_err(|e| io_err(path, e))?;
        if n == 0 {
            return Err(Error::MalformedHeader("missing newline".into()));
        }
        if byte[0] == b'\n' {
            break;
        }
        header.push(byte[0]);
        if header.len() > 256 {
            return Err(Error::MalformedHeader("header longer than 256 bytes".into()));
        }
    }
    let header = String::from_utf8(header)
        .map_err(|_| Error::MalformedHeader("header is not UTF-8".into()))?;

    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 5 || tokens[0] != MAGIC {
        return Err(Error::MalformedHeader(format!("bad header line: {header:?}")));
    }
    let expect = |tok: &str, key: &str| -> Result<String> {
        tok.strip_prefix(&format!("{key}="))
            .map(str::to_string)
            .ok_or_else(|| Error::MalformedHeader(format!("expected {key}=..., got {tok:?}")))
    };
    let dtype = expect(tokens[1], "dtype")?;
    let order = expect(tokens[2], "order")?;
    if dtype != "f32" || order != "C" {
        return Err(Error::MalformedHeader(format!(
            "unsupported dtype/order: {dtype}/{order}"
        )));
    }
    let dims: Vec<usize> = expect(tokens[3], "shape")?
        .split(',')
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::MalformedHeader(format!("bad shape token {s:?}")))
        })
        .collect::<Result<_>>()?;
    let shape = Shape::from_dims(&dims)?;
    let k: usize = expect(tokens[4], "channels")?
        .parse()
        .map_err(|_| Error::MalformedHeader("bad channel count".into()))?;
    if k == 0 {
        return Err(Error::MalformedHeader("channels must be >= 1".into()));
    }

    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;
    let want = shape.len() * k * 4;
    if bytes.len() != want {
        return Err(Error::MalformedHeader(format!(
            "payload is {} bytes, expected {want}",
            bytes.len()
        )));
    }
    let mut channels = Vec::with_capacity(k);
    for c in 0..k {
        let mut data = Vec::with_capacity(shape.len());
        for i in 0..shape.len() {
            let off = (c * shape.len() + i) * 4;
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            data.push(v as f64);
        }
        channels.push(data);
    }
    Ok(RawField { shape, channels })
}

pub fn write_scalar(path: &Path, f: &ScalarField) -> Result<()> {
    write_raw(path, f.shape(), &[f.data()])
}

pub fn read_scalar(path: &Path) -> Result<ScalarField> {
    let raw = read_raw(path)?;
    if raw.channels.len() != 1 {
        return Err(Error::MalformedHeader(format!(
            "expected 1 channel, file has {}",
            raw.channels.len()
        )));
    }
    let mut it = raw.channels.into_iter();
    ScalarField::from_vec(raw.shape, it.next().unwrap())
}

pub fn write_soft(path: &Path, u: &SoftSegmentation) -> Result<()> {
    let channels: Vec<&[f64]> = u.channels().iter().map(|c| c.data()).collect();
    write_raw(path, u.shape(), &channels)
}

pub fn read_soft(path: &Path) -> Result<SoftSegmentation> {
    let raw = read_raw(path)?;
    let shape = raw.shape;
    let channels = raw
        .channels
        .into_iter()
        .map(|d| ScalarField::from_vec(shape, d))
        .collect::<Result<Vec<_>>>()?;
    SoftSegmentation::from_unnormalized(channels)
}

pub fn write_labels(path: &Path, l: &LabelMap) -> Result<()> {
    let data: Vec<f64> = l.ids().iter().map(|&id| id as f64).collect();
    write_raw(path, l.shape(), &[&data])
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let raw = read_raw(path)?;
    if raw.channels.len() != 1 {
        return Err(Error::MalformedHeader(format!(
            "label file must have 1 channel, got {}",
            raw.channels.len()
        )));
    }
    let mut ids = Vec::with_capacity(raw.shape.len());
    let mut max = 0u32;
    for &v in &raw.channels[0] {
        if !v.is_finite() || v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
            return Err(Error::InvalidArgument(format!(
                "label file holds non-integer value {v}"
            )));
        }
        let id = v as u32;
        max = max.max(id);
        ids.push(id);
    }
    LabelMap::new(raw.shape, max as usize + 1, ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_round_trip_bit_exact() {
        let dir = std::env::temp_dir().join(format!("segreg_io_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field");

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let shape = Shape::d2(6, 5);
        // f32-representable values so disk round-trip is exact
        let data: Vec<f64> = (0..shape.len())
            .map(|_| rng.gen_range(-2.0f32..2.0) as f64)
            .collect();
        let f = ScalarField::from_vec(shape, data).unwrap();
        write_scalar(&path, &f).unwrap();
        let g = read_scalar(&path).unwrap();
        assert_eq!(f.data(), g.data());

        let bytes1 = std::fs::read(&path).unwrap();
        write_scalar(&path, &g).unwrap();
        let bytes2 = std::fs::read(&path).unwrap();
        assert_eq!(bytes1, bytes2);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn labels_round_trip() {
        let dir = std::env::temp_dir().join(format!("segreg_iol_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("labels");
        let l = LabelMap::new(Shape::d2(2, 3), 4, vec![0, 3, 1, 1, 2, 0]).unwrap();
        write_labels(&path, &l).unwrap();
        let back = read_labels(&path).unwrap();
        assert_eq!(back.ids(), l.ids());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn malformed_header_rejected() {
        let dir = std::env::temp_dir().join(format!("segreg_iom_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad");
        std::fs::write(&path, b"SEGREG9 dtype=f32 order=C shape=2,2 channels=1\n").unwrap();
        assert!(matches!(read_raw(&path), Err(Error::MalformedHeader(_))));
        std::fs::write(&path, b"SEGREG1 dtype=f32 order=C shape=2,2 channels=1\nxx").unwrap();
        assert!(matches!(read_raw(&path), Err(Error::MalformedHeader(_))));
        std::fs::remove_dir_all(&dir).ok();
    }
}
