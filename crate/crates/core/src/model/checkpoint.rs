//! Checkpoint files.
//!
//! ```text
//! <manifest JSON, one line>\n
//! <blob length in bytes>\n
//! <blob: little-endian f64 values of every tensor, in manifest order>
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, ModelState, ParamTensor};
use crate::error::{Error, Result};

const FORMAT: &str = "fedtlu-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    arch: ArchConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    block_id: Option<usize>,
    /// Byte offset into the blob.
    offset: usize,
    count: usize,
}

pub fn save_checkpoint(model: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let mut offset = 0;
    let tensors = model
        .params
        .iter()
        .map(|p| {
            let e = TensorEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
                block_id: p.block_id,
                offset,
                count: p.param_count(),
            };
            offset += 8 * p.param_count();
            e
        })
        .collect();
    let manifest = Manifest {
        format: FORMAT.to_string(),
        version: VERSION,
        arch: model.arch,
        tensors,
    };

    let mut blob = Vec::with_capacity(offset);
    for p in &model.params {
        for v in &p.values {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut out = serde_json::to_vec(&manifest)?;
    out.push(b'\n');
    writeln!(out, "{}", blob.len())?;
    out.extend_from_slice(&blob);
    fs::write(path, out)?;
    Ok(())
}

fn split_line(bytes: &[u8]) -> Result<(&[u8], &[u8])> {
    let pos = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing line terminator".to_string()))?;
    Ok((&bytes[..pos], &bytes[pos + 1..]))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
    let bytes = fs::read(path)?;
    let (manifest_bytes, rest) = split_line(&bytes)?;
    let manifest: Manifest = serde_json::from_slice(manifest_bytes)
        .map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format {} v{}",
            manifest.format, manifest.version
        )));
    }
    let (len_line, blob) = split_line(rest)?;
    let blob_len: usize = std::str::from_utf8(len_line)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Checkpoint("bad blob length header".to_string()))?;
    if blob.len() != blob_len {
        return Err(Error::Checkpoint(format!(
            "blob holds {} bytes, header declares {blob_len}",
            blob.len()
        )));
    }

    manifest.arch.validate()?;
    let layout = manifest.arch.layout();
    if layout.len() != manifest.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, manifest lists {}",
            layout.len(),
            manifest.tensors.len()
        )));
    }

    let mut params = Vec::with_capacity(layout.len());
    let mut expected_offset = 0;
    for ((name, shape, block_id), entry) in layout.into_iter().zip(&manifest.tensors) {
        if entry.name != name {
            return Err(Error::Checkpoint(format!(
                "unexpected tensor `{}` where `{name}` belongs",
                entry.name
            )));
        }
        if entry.shape != shape || entry.block_id != block_id {
            return Err(Error::Checkpoint(format!("layout of `{name}` does not match arch")));
        }
        let n: usize = shape.iter().product();
        if entry.count != n {
            return Err(Error::Checkpoint(format!(
                "`{name}` declares {} values, shape holds {n}",
                entry.count
            )));
        }
        if entry.offset != expected_offset {
            return Err(Error::Checkpoint(format!("`{name}` has offset {}", entry.offset)));
        }
        let end = entry.offset + 8 * n;
        let raw = blob
            .get(entry.offset..end)
            .ok_or_else(|| Error::Checkpoint(format!("blob truncated inside `{name}`")))?;
        let values = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        params.push(ParamTensor { name, shape, values, block_id });
        expected_offset = end;
    }
    if expected_offset != blob.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing blob bytes",
            blob.len() - expected_offset
        )));
    }
    Ok(ModelState { arch: manifest.arch, params })
}
