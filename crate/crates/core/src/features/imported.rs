use std::io::{Read, Write};
use std::path::Path;

use super::map::{FeatureMap, Modality};
use crate::error::{Error, Result};

/// Leading 8 bytes of an imported feature tensor file.
pub const TENSOR_MAGIC: &[u8; 8] = b"D3FTNSR1";

/// Encodes a feature map as `magic | C H W (u32 LE) | C·H·W f32 LE`,
/// row-major with `W` fastest.
pub fn encode_feature_tensor(map: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * map.data().len());
    out.extend_from_slice(TENSOR_MAGIC);
    for d in [map.channels(), map.height(), map.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in map.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_feature_tensor(bytes: &[u8], patch_size: usize, modality: Modality) -> Result<FeatureMap> {
    if bytes.len() < 20 || &bytes[..8] != TENSOR_MAGIC {
        return Err(Error::Format("missing feature tensor magic".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (c, h, w) = (dim(0), dim(1), dim(2));
    let expected = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Format("tensor dimensions overflow".into()))?;
    let body = &bytes[20..];
    if body.len() != expected {
        return Err(Error::Format(format!(
            "tensor {c}x{h}x{w} needs {expected} payload bytes, found {}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    FeatureMap::new(c, h, w, patch_size, modality, data)
        .map_err(|e| Error::Format(format!("invalid tensor contents: {e}")))
}

pub fn read_feature_tensor(path: &Path, patch_size: usize, modality: Modality) -> Result<FeatureMap> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_feature_tensor(&bytes, patch_size, modality).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_feature_tensor(path: &Path, map: &FeatureMap) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&encode_feature_tensor(map)))
        .map_err(|e| Error::io(path, e))
}
