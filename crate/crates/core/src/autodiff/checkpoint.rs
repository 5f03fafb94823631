//! Parameter checkpoint file: an 8-byte little-endian header length, a JSON
//! header, then the raw little-endian payload in registry order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::error::AutodiffError;
use super::params::ParamStore;
use super::scalar::{Precision, Scalar};
use super::tensor::{numel, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub precision: Precision,
    pub params: Vec<CheckpointEntry>,
}

pub fn encode_checkpoint<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        precision: T::PRECISION,
        params: store
            .ids()
            .map(|id| CheckpointEntry {
                name: store.name(id).to_string(),
                shape: store.get(id).shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for id in store.ids() {
        for &v in store.get(id).data() {
            v.write_le(&mut out);
        }
    }
    out
}

/// Decodes a checkpoint, converting to `T` if the file was written in the
/// other precision.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8], path: &Path) -> Result<ParamStore<T>, AutodiffError> {
    let fail = |detail: String| AutodiffError::Checkpoint {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 8 {
        return Err(fail("truncated header".into()));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = &bytes[8..];
    if body.len() < header_len {
        return Err(fail("truncated header".into()));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&body[..header_len]).map_err(|e| fail(format!("bad header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(fail(format!("unsupported format version {}", header.format_version)));
    }
    let width = header.precision.byte_width();
    let expected: usize = header.params.iter().map(|p| numel(&p.shape) * width).sum();
    let payload = &body[header_len..];
    if payload.len() != expected {
        return Err(fail(format!("payload has {} bytes, header implies {expected}", payload.len())));
    }
    let mut store = ParamStore::new();
    let mut offset = 0;
    for entry in header.params {
        let n = numel(&entry.shape);
        let data: Vec<T> = payload[offset..offset + n * width]
            .chunks_exact(width)
            .map(|c| match header.precision {
                Precision::F32 => T::from_f64(f32::read_le(c) as f64),
                Precision::F64 => T::from_f64(f64::read_le(c)),
            })
            .collect();
        offset += n * width;
        store.add(entry.name, Tensor::new(entry.shape, data)?)?;
    }
    Ok(store)
}

pub fn save_checkpoint<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<(), AutodiffError> {
    fs::write(path, encode_checkpoint(store)).map_err(|source| AutodiffError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ParamStore<T>, AutodiffError> {
    let bytes = fs::read(path).map_err(|source| AutodiffError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("dense.w", Tensor::from_fn(vec![2, 3], |i| i as f32 * 0.5 - 1.0)).unwrap();
        s.add("dense.b", Tensor::from_fn(vec![3], |i| -(i as f32))).unwrap();
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = sample_store();
        let bytes = encode_checkpoint(&s);
        let back: ParamStore<f32> = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(encode_checkpoint(&back), bytes);
        assert_eq!(back.get(back.id("dense.b").unwrap()).data(), &[0.0, -1.0, -2.0]);
    }

    #[test]
    fn truncated_payload_rejected() {
        let bytes = encode_checkpoint(&sample_store());
        let err = decode_checkpoint::<f32>(&bytes[..bytes.len() - 1], Path::new("mem")).unwrap_err();
        assert!(err.to_string().contains("payload"));
    }

    #[test]
    fn precision_conversion_on_load() {
        let bytes = encode_checkpoint(&sample_store());
        let wide: ParamStore<f64> = decode_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(wide.get(wide.id("dense.w").unwrap()).data()[1], -0.5);
    }
}
