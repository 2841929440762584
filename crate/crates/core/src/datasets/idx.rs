//! IDX files: big-endian, unsigned-byte payloads. Images use magic
//! `0x00000803` (count, rows, cols), labels `0x00000801` (count).

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor2;

const UBYTE: u8 = 0x08;

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

/// Parses an IDX payload of unsigned bytes, returning `(dims, payload)`.
fn parse_idx(bytes: &[u8], expected_rank: Option<u8>) -> Result<(Vec<usize>, &[u8])> {
    if bytes.len() < 4 {
        return Err(Error::Format("truncated IDX magic".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format(format!(
            "bad IDX magic {:02x}{:02x}{:02x}{:02x}",
            bytes[0], bytes[1], bytes[2], bytes[3]
        )));
    }
    if bytes[2] != UBYTE {
        return Err(Error::Format(format!("unsupported IDX element type 0x{:02x}", bytes[2])));
    }
    let rank = bytes[3];
    if let Some(r) = expected_rank {
        if rank != r {
            return Err(Error::Format(format!(
                "wrong IDX magic 0x{:08x}, expected 0x{:08x}",
                u32::from_be_bytes([0, 0, UBYTE, rank]),
                u32::from_be_bytes([0, 0, UBYTE, r])
            )));
        }
    }
    if rank == 0 {
        return Err(Error::Format("IDX rank must be positive".into()));
    }
    let mut dims = Vec::with_capacity(rank as usize);
    for k in 0..rank as usize {
        dims.push(read_u32(bytes, 4 + 4 * k)? as usize);
    }
    let header = 4 + 4 * rank as usize;
    let n: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < n {
        return Err(Error::Format(format!(
            "truncated IDX payload: {} bytes for {n} elements",
            payload.len()
        )));
    }
    if payload.len() > n {
        return Err(Error::Format(format!(
            "IDX payload has {} trailing bytes",
            payload.len() - n
        )));
    }
    Ok((dims, payload))
}

/// Image file (rank >= 2): returns per-sample shape and features scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<usize>, Tensor2)> {
    let (dims, payload) = parse_idx(bytes, None)?;
    if dims.len() < 2 {
        return Err(Error::Format(format!(
            "wrong IDX magic for images: rank {}, expected at least 2 (0x00000803 for 2-D images)",
            dims.len()
        )));
    }
    let n = dims[0];
    let shape = dims[1..].to_vec();
    let d: usize = shape.iter().product();
    let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok((shape, Tensor2::new(n, d, data)?))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let (_, payload) = parse_idx(bytes, Some(1))?;
    Ok(payload.iter().map(|&b| b as usize).collect())
}

/// Loads an image/label file pair; the class count is `max label + 1`
/// (at least two).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let img = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let lab = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let (shape, features) = parse_idx_images(&img)?;
    let labels = parse_idx_labels(&lab)?;
    if labels.len() != features.rows() {
        return Err(Error::Format(format!(
            "count mismatch: {} images but {} labels",
            features.rows(),
            labels.len()
        )));
    }
    let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::with_shape(features, labels, classes, shape)
}

fn encode(dims: &[usize], payload: impl Iterator<Item = u8>) -> Result<Vec<u8>> {
    let mut out = vec![0, 0, UBYTE, dims.len() as u8];
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend(payload);
    Ok(out)
}

/// Writes features (rescaled to bytes) and labels as an IDX pair.
pub fn write_idx(dataset: &Dataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let mut dims = vec![dataset.len()];
    dims.extend_from_slice(dataset.sample_shape());
    let pixels = dataset
        .features()
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
    let img = encode(&dims, pixels)?;
    if let Some(&bad) = dataset.labels().iter().find(|&&y| y > 255) {
        return Err(Error::Format(format!("label {bad} does not fit in a byte")));
    }
    let lab = encode(&[dataset.len()], dataset.labels().iter().map(|&y| y as u8))?;
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    fs::write(images_path, img).map_err(|e| Error::io(images_path, e))?;
    fs::write(labels_path, lab).map_err(|e| Error::io(labels_path, e))?;
    Ok(())
}
