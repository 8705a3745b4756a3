//! Named-array weight archive.
//!
//! Layout: magic `SLSCKPT1`, u64 LE manifest length, JSON manifest, then every
//! array's values as f64 LE in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use slscom_autograd::{ParamKind, ParamStore, Tensor};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SLSCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Component prefixes stored, e.g. `["se."]`.
    pub components: Vec<String>,
    pub preset: String,
    pub fingerprint: String,
    pub mode: String,
    pub ablations: Vec<String>,
    /// Named scalars stored with the weights, such as the hybrid quantizer bound.
    #[serde(default)]
    pub extra: BTreeMap<String, f64>,
    pub entries: Vec<EntryMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryMeta {
    pub name: String,
    pub buffer: bool,
    pub shape: Vec<usize>,
}

/// Write every entry of `store` whose name starts with one of `manifest.components`.
pub fn save(path: &Path, store: &ParamStore, mut manifest: Manifest) -> Result<()> {
    let picked: Vec<_> = store
        .iter()
        .filter(|(_, e)| manifest.components.iter().any(|p| e.name.starts_with(p.as_str())))
        .collect();
    manifest.entries = picked
        .iter()
        .map(|(_, e)| EntryMeta {
            name: e.name.clone(),
            buffer: e.kind == ParamKind::Buffer,
            shape: e.value().shape().to_vec(),
        })
        .collect();
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + picked.iter().map(|(_, e)| 8 * e.value().len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, e) in &picked {
        for v in e.value().data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a checkpoint into a fresh store holding only its entries.
pub fn load(path: &Path) -> Result<(Manifest, ParamStore)> {
    let bytes = fs::read(path).map_err(|e| Error::MissingCheckpoint(format!("{}: {e}", path.display())))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body_start = 16 + len;
    if bytes.len() < body_start {
        return Err(Error::Checkpoint("manifest truncated".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..body_start])?;
    let mut store = ParamStore::new();
    let mut off = body_start;
    for e in &manifest.entries {
        let n: usize = e.shape.iter().product();
        let end = off + 8 * n;
        if bytes.len() < end {
            return Err(Error::Checkpoint(format!("data for `{}` truncated", e.name)));
        }
        let data = bytes[off..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let kind = if e.buffer { ParamKind::Buffer } else { ParamKind::Weight };
        store.add(e.name.clone(), kind, Tensor::from_vec(&e.shape, data)?);
        off = end;
    }
    if off != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last array".into()));
    }
    Ok((manifest, store))
}
