//! Policy and world-model checkpoints.
//!
//! The policy is one JSON document. The world model is a JSON manifest next
//! to a raw little-endian `f32` blob holding the tensors in storage order;
//! the manifest records every tensor's shape and the blob's SHA-256.

use std::fs;
use std::path::{Path, PathBuf};

use foreseer_core::policy::ModeMixture;
use foreseer_core::worldmodel::{LossWeights, Normalizer, Tensor, TrainMeta, WorldModelDims, WorldModelParams};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub const WM_FORMAT: &str = "foreseer-world-model";
pub const WM_VERSION: u32 = 1;

pub fn save_policy(path: &Path, policy: &ModeMixture) -> Result<()> {
    io::write_json(path, policy)
}

pub fn load_policy(path: &Path) -> Result<ModeMixture> {
    let p: ModeMixture = io::read_json(path)?;
    p.validate().map_err(|e| Error::checkpoint(path, e.to_string()))?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldModelManifest {
    pub format: String,
    pub version: u32,
    pub dims: WorldModelDims,
    pub loss: LossWeights,
    pub norm: Normalizer,
    pub meta: TrainMeta,
    pub num_params: usize,
    pub tensors: Vec<TensorEntry>,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub blob_sha256: String,
}

fn tensor_entries(dims: &WorldModelDims) -> Vec<TensorEntry> {
    Tensor::ALL
        .iter()
        .map(|t| {
            let (rows, cols) = t.shape(dims);
            TensorEntry {
                name: t.name().to_string(),
                rows,
                cols,
            }
        })
        .collect()
}

/// Blob path for a manifest path: same stem, `.bin` extension.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Write `<path>` (manifest) and its blob. Parameters are stored as `f32`.
pub fn save_world_model(path: &Path, p: &WorldModelParams) -> Result<WorldModelManifest> {
    let blob: Vec<u8> = p.values().iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
    let blob_file = blob_path(path);
    let manifest = WorldModelManifest {
        format: WM_FORMAT.to_string(),
        version: WM_VERSION,
        dims: p.dims,
        loss: p.loss,
        norm: p.norm.clone(),
        meta: p.meta.clone(),
        num_params: p.num_params(),
        tensors: tensor_entries(&p.dims),
        blob: blob_file
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        blob_sha256: io::sha256_hex(&blob),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&blob_file, &blob).map_err(|e| Error::io(&blob_file, e))?;
    io::write_json(path, &manifest)?;
    Ok(manifest)
}

pub fn load_world_model(path: &Path) -> Result<WorldModelParams> {
    let m: WorldModelManifest = io::read_json(path)?;
    let bad = |reason: String| Error::checkpoint(path, reason);
    if m.format != WM_FORMAT || m.version != WM_VERSION {
        return Err(bad(format!("unsupported format {} v{}", m.format, m.version)));
    }
    if m.tensors != tensor_entries(&m.dims) {
        return Err(bad("tensor table does not match the declared dimensions".into()));
    }
    let expect: usize = m.tensors.iter().map(|t| t.rows * t.cols).sum();
    if m.num_params != expect {
        return Err(bad(format!("num_params {} but tensors hold {expect}", m.num_params)));
    }
    let blob_file = path.with_file_name(&m.blob);
    let blob = fs::read(&blob_file).map_err(|e| Error::io(&blob_file, e))?;
    if blob.len() != 4 * expect {
        return Err(bad(format!("blob holds {} bytes, expected {}", blob.len(), 4 * expect)));
    }
    if io::sha256_hex(&blob) != m.blob_sha256 {
        return Err(bad("blob SHA-256 does not match the manifest".into()));
    }
    let values = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    WorldModelParams::from_values(m.dims, m.loss, m.norm, m.meta, values).map_err(|e| bad(e.to_string()))
}

/// Round parameters through `f32`, as a save/load cycle would.
pub fn f32_rounded(p: &WorldModelParams) -> WorldModelParams {
    let mut q = p.clone();
    for v in q.values_mut() {
        *v = *v as f32 as f64;
    }
    q
}
