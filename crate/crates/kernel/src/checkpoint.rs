//! Checkpoint files: a JSON manifest plus a sidecar blob of little-endian f64.
//!
//! For a manifest at `model.ckpt` the blob lives at `model.ckpt.bin`. The
//! manifest lists every parameter with its shape and byte offset into the
//! blob, the dtype tag `"f64"`, a format version and the store seed. A free
//! form `meta` object carries model configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::array::DenseArray;
use crate::error::{KernelError, Result};
use crate::params::ParameterStore;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    pub seed: u64,
    /// Blob file name, relative to the manifest's directory.
    pub blob: String,
    pub params: Vec<ManifestEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn io_err(path: &Path, source: std::io::Error) -> KernelError {
    KernelError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn blob_path(manifest: &Path) -> PathBuf {
    let mut name = manifest.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".bin");
    manifest.with_file_name(name)
}

pub fn save_checkpoint(path: &Path, store: &ParameterStore, meta: serde_json::Value) -> Result<()> {
    let blob = blob_path(path);
    let mut bytes = Vec::with_capacity(store.size() * 8);
    let mut params = Vec::with_capacity(store.len());
    for (name, p) in store.iter() {
        params.push(ManifestEntry {
            name: name.to_string(),
            shape: p.value.shape().to_vec(),
            offset: bytes.len() as u64,
        });
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dtype: "f64".into(),
        seed: store.seed(),
        blob: blob
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        params,
        meta,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| KernelError::Format(e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(&blob, &bytes).map_err(|e| io_err(&blob, e))?;
    fs::write(path, text).map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| KernelError::Format(format!("{}: {e}", path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(KernelError::Format(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    if manifest.dtype != "f64" {
        return Err(KernelError::Format(format!("unsupported dtype {}", manifest.dtype)));
    }
    Ok(manifest)
}

/// Loads a checkpoint into a fresh store; returns it with the `meta` object.
pub fn load_checkpoint(path: &Path) -> Result<(ParameterStore, serde_json::Value)> {
    let manifest = read_manifest(path)?;
    let blob = path.with_file_name(&manifest.blob);
    let bytes = fs::read(&blob).map_err(|e| io_err(&blob, e))?;
    let mut store = ParameterStore::new(manifest.seed);
    for entry in &manifest.params {
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + n * 8;
        if end > bytes.len() {
            return Err(KernelError::Format(format!(
                "parameter {} extends past the end of {}",
                entry.name,
                blob.display()
            )));
        }
        let data = bytes[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.insert(&entry.name, DenseArray::new(entry.shape.clone(), data)?);
    }
    Ok((store, manifest.meta))
}
