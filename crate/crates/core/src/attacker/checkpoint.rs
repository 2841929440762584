//! Checkpoint layout: the 8-byte magic `LDIACKP1`, a little-endian `u32`
//! header length, a JSON header, then every parameter as a little-endian
//! `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AttackerModel;
use crate::error::{Error, Result};
use crate::numerics::{layout_hash, ParameterVector, Segment};

const MAGIC: &[u8; 8] = b"LDIACKP1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    classes: usize,
    hidden: usize,
    layout: Vec<Segment>,
    layout_hash: String,
}

pub fn save_checkpoint(model: &AttackerModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        classes: model.classes(),
        hidden: model.hidden(),
        layout: model.params().layout().to_vec(),
        layout_hash: model.params().layout_hash(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 8 * model.params().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in model.params().values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint, rejecting any layout that does not hash to the
/// recorded value or does not match the attacker's own layout.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<AttackerModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not an attacker checkpoint".into()));
    }
    let n = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    let body = bytes
        .get(12..12 + n)
        .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
    let header: Header = serde_json::from_slice(body)?;
    if layout_hash(&header.layout) != header.layout_hash {
        return Err(Error::Format("checkpoint layout hash mismatch".into()));
    }
    let payload = &bytes[12 + n..];
    if payload.len() % 8 != 0 {
        return Err(Error::Format("checkpoint payload is not a whole number of f64".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let params = ParameterVector::from_values(header.layout, values)?;
    AttackerModel::from_params(header.classes, header.hidden, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    #[test]
    fn round_trip_and_corruption() {
        let m = AttackerModel::init(3, 5, RngStream::root(0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        save_checkpoint(&m, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), m);

        let mut bytes = std::fs::read(&p).unwrap();
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let at = text.find("\"layout_hash\":\"").unwrap() + 15;
        bytes[at] = if bytes[at] == b'0' { b'1' } else { b'0' };
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Format(_))));

        std::fs::write(&p, b"garbage").unwrap();
        assert!(load_checkpoint(&p).is_err());
    }
}
