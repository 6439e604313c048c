//! Single-file checkpoint container.
//!
//! Layout: an 8-byte magic, a little-endian u64 manifest length, the JSON
//! manifest, then a raw blob of little-endian IEEE-754 f32 values. The
//! manifest carries a format version, an arbitrary caller-supplied config
//! value, and one `{name, shape, dtype, byte_offset}` entry per parameter,
//! in store (lexicographic) order; byte offsets are relative to the blob.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TUNFOLD1";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: serde_json::Value,
    entries: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    byte_offset: u64,
}

pub fn save_checkpoint(path: &Path, config: &serde_json::Value, params: &ParamStore) -> Result<()> {
    let mut entries = Vec::with_capacity(params.len());
    let mut offset = 0u64;
    for (name, tensor) in params.iter() {
        entries.push(Entry {
            name: name.clone(),
            shape: tensor.shape().to_vec(),
            dtype: "f32".to_string(),
            byte_offset: offset,
        });
        offset += (tensor.numel() * 4) as u64;
    }
    let manifest = Manifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: config.clone(),
        entries,
    };
    let manifest_bytes =
        serde_json::to_vec(&manifest).map_err(|e| Error::Data(format!("manifest encode: {e}")))?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&manifest_bytes)?;
    for (_, tensor) in params.iter() {
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(serde_json::Value, ParamStore)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad(path, "file too short"))?;
    if &magic != MAGIC {
        return Err(bad(path, "bad magic, not a checkpoint file"));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes).map_err(|_| bad(path, "truncated manifest length"))?;
    let manifest_len = u64::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_bytes).map_err(|_| bad(path, "truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| bad(path, &format!("manifest decode: {e}")))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(bad(
            path,
            &format!(
                "format version {} unsupported (this build reads {CHECKPOINT_FORMAT_VERSION})",
                manifest.format_version
            ),
        ));
    }
    let mut blob = Vec::new();
    r.read_to_end(&mut blob)?;

    let mut params = ParamStore::new();
    for entry in &manifest.entries {
        if entry.dtype != "f32" {
            return Err(bad(path, &format!("unsupported dtype {} for {}", entry.dtype, entry.name)));
        }
        let numel: usize = entry.shape.iter().product();
        let start = entry.byte_offset as usize;
        let end = start + numel * 4;
        if end > blob.len() {
            return Err(bad(path, &format!("blob too short for entry {}", entry.name)));
        }
        let data: Vec<f32> = blob[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        params.insert(&entry.name, Tensor::from_vec(&entry.shape, data)?)?;
    }
    Ok((manifest.config, params))
}

fn bad(path: &Path, msg: &str) -> Error {
    Error::Data(format!("checkpoint {}: {msg}", path.display()))
}
